"""Regenerate the synthetic evaluation corpus under src/omegacov/data/corpus.

Each app is a themed reader-style hybrid app:

* a launcher with a home page, a reader activity and a settings screen;
* the reader has a list fragments-state whose click events send typed
  messages through one shared execjs site and get answers through one shared
  onJsPrompt callback (so they differ in def/use properties only), and a
  detail state with web-end clicks;
* a media click makes the host look up a "title" the page never sends
  (planted crash), and rotating the reader after a message loses the page's
  progress slot (planted drop-web-state fault);
* the settings screen has no way back, which traps pure random exploration;
* optional bridge calls, onPageFinished callback and a three-state gallery.

Usage: python scripts/build_corpus.py [OUT_DIR]
"""
from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

from omegacov.appdsl import parse_app, validate_app

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "omegacov" / "data" / "corpus"


@dataclass(frozen=True)
class Theme:
    name: str
    host: str
    variants: tuple[str, ...]
    bridge: bool = False
    page_finished: bool = False
    gallery: bool = False


THEMES = (
    Theme("wikinews", "news.example.org", ("section", "comments", "related"), page_finished=True),
    Theme("recipebox", "recipes.example.com", ("ingredients", "steps", "reviews", "nutrition"), bridge=True),
    Theme("citymap", "maps.example.net", ("route", "places"), gallery=True),
    Theme("shopfront", "shop.example.com", ("product", "cart", "offers"), bridge=True, page_finished=True),
    Theme("forumapp", "forum.example.org", ("thread", "replies", "profile", "search"), gallery=True),
    Theme("weatherly", "weather.example.net", ("today", "weekly"), bridge=True),
    Theme("podplayer", "pods.example.com", ("episode", "notes", "queue"), page_finished=True, gallery=True),
    Theme("notepad", "notes.example.org", ("note", "tags", "history"), bridge=True),
    Theme("tripplan", "trips.example.com", ("itinerary", "hotels", "flights", "tips"), page_finished=True),
    Theme("bankview", "bank.example.net", ("balance", "payments"), bridge=True, gallery=True),
)


def _variant_event(t: Theme, k: int, v: str) -> str:
    lines = [
        f"    event open_{v} kind=click",
        "      req = {}",
        f'      req.url = "https://{t.host}/{v}/{k + 1}"',
        f"      offset = {3 + 2 * k}",
        "      url = req.url",
    ]
    if k % 2 == 1:
        lines += [
            "      base = lib len(url)",
            "      offset = offset + base",
        ]
    lines += [
        "      msg = {}",
        "      msg.url = url",
        "      msg.offset = offset",
        f'      call sendMessage("{v}", msg)',
    ]
    return "\n".join(lines)


def _guest_variant(t: Theme, k: int, v: str) -> str:
    lines = [
        f"  handler render_{v}(msg)",
        "    url = msg.url",
        "    offset = msg.offset",
        "    status = lib fetch(url)",
        f"    dom.{v} = url",
        "    dom.progress = offset",
    ]
    if t.bridge and k == 0:
        lines += [
            f'    size = bridge readerPref("{v}")',
            "    dom.fontSize = size",
        ]
    if k % 2 == 0:
        lines += [
            "    label = lib upper(url)",
            "    dom.label = label",
        ]
    lines.append(f'    prompt("{v}-done", status, offset)')
    return "\n".join(lines)


def render(t: Theme) -> str:
    out: list[str] = [f"# {t.name}: generated by scripts/build_corpus.py", f"app {t.name}", ""]
    out += [
        "activity Main launcher",
        "  entry",
        "    api setJavaScriptEnabled(true)",
        '    api loadUrl("page:home")',
        "  event openReader kind=click goto=Reader",
        "  event openSettings kind=click goto=Settings",
    ]
    if t.gallery:
        out.append("  event openGallery kind=click goto=Gallery")
    out += [
        "  event refresh kind=click",
        "    api reload()",
        "  event bannerTap kind=web-click web",
        '    call onBanner("banner-top")',
        "  event rotate kind=rotate",
        "",
        "activity Reader",
        "  entry",
        '    api loadUrl("page:reader")',
        "  event rotate kind=rotate",
        "  state list",
    ]
    out += [_variant_event(t, k, v) for k, v in enumerate(t.variants)]
    out += [
        "    event showDetail kind=click switch",
        '      tab = "detail"',
        "      shown = tab",
        "  state detail",
        "    event mediaClick kind=web-click web",
        f'      call onMediaClicked("https://{t.host}/media/cover.jpg", "media-1")',
        "    event linkClick kind=web-click web",
        f'      call onLinkClicked("https://{t.host}/about")',
        "    event showList kind=click switch",
        '      tab = "list"',
        "",
        "activity Settings",
        "  entry",
        "    dark = false",
        "    size = 14",
        "  event toggleDark kind=click",
        "    dark = true",
        "    pref = lib concat(\"dark=\", dark)",
        "  event bigger kind=click",
        "    size = 18",
        "    note = lib format(\"size {}\", size)",
        "  event scroll kind=scroll",
        "    pos = 40",
        "",
    ]
    if t.gallery:
        out += [
            "activity Gallery",
            "  entry",
            '    api loadUrl("page:gallery")',
            "  event back kind=back",
        ]
        for s, name in enumerate(("grid", "slideshow", "info")):
            nxt = ("slideshow", "info", "grid")[s]
            out += [
                f"  state {name}",
                f"    event {name}Tap kind=web-click web",
                f'      call show_{name}("img-{s}")',
                f"    event to_{nxt} kind=click switch",
                f'      tab = "{nxt}"',
            ]
        out.append("")

    out += [
        "func sendMessage(type, msg)",
        "  @sendjs execjs(\"handleMessage($1, $2)\", type, msg)",
        "",
        "func showDialog(text)",
        "  shown = text",
        "",
    ]
    if t.bridge:
        out += [
            "bridge readerPref(key)",
            "  size = 16",
            "  wide = key == \"wide\"",
            "  return size",
            "",
        ]
    if t.page_finished:
        out += [
            "callback onPageFinished(url)",
            "  current = url",
            "  where = lib host(current)",
            "",
        ]
    out += [
        "callback onJsPrompt(type, data, extra)",
        '  if type == "click"',
        "    msg = {}",
        "    msg.href = data",
        "    msg.id = extra",
        '    call sendMessage("onClick", msg)',
        '  if type == "mediaClicked"',
        "    payload = lib parse(data)",
        "    @titleLookup title = payload.title",
        '    caption = lib concat("Media: ", title)',
        "    call showDialog(caption)",
        '  if type == "link"',
        "    site = lib host(data)",
        "    call showDialog(site)",
        '  if type == "banner"',
        "    seen = data",
    ]
    if t.gallery:
        out += [
            '  if type == "gallery"',
            "    view = data",
            "    picked = lib concat(view, \":\", extra)",
        ]
    for v in t.variants:
        out += [
            f'  if type == "{v}-done"',
            "    status = data",
            "    ok = status == 200",
            "    pos = extra + 1",
        ]
    out += ["  return", ""]

    out += [
        "page home",
        "  init",
        '    dom.title = "Home"',
        "  handler onBanner(id)",
        '    prompt("banner", id)',
        "",
        "page reader",
        "  init",
        f'    dom.title = "{t.name}"',
        "  handler handleMessage(type, msg)",
    ]
    for v in t.variants:
        out += [f'    if type == "{v}"', f"      call render_{v}(msg)"]
    out += [
        '    if type == "onClick"',
        "      call handleClick(msg)",
    ]
    out += [_guest_variant(t, k, v) for k, v in enumerate(t.variants)]
    out += [
        "  handler handleClick(msg)",
        "    href = msg.href",
        "    id = msg.id",
        "    payload = {}",
        "    payload.href = href",
        "    payload.id = id",
        "    data = lib stringify(payload)",
        '    prompt("mediaClicked", data)',
        "  handler onMediaClicked(href, id)",
        '    prompt("click", href, id)',
        "  handler onLinkClicked(href)",
        '    prompt("link", href)',
        "",
    ]
    if t.gallery:
        out += ["page gallery", "  init", '    dom.title = "Gallery"']
        for name in ("grid", "slideshow", "info"):
            out += [
                f"  handler show_{name}(id)",
                f'    view = "{name}"',
                '    prompt("gallery", view, id)',
            ]
        out.append("")

    out += [
        "fault at=titleLookup when=absent(title) effect=crash",
        "fault at=reader when=present(progress) effect=drop-web-state",
        "",
    ]
    return "\n".join(out)


def main(argv: list[str]) -> int:
    out = Path(argv[1]) if len(argv) > 1 else DEFAULT_OUT
    out.mkdir(parents=True, exist_ok=True)
    for t in THEMES:
        text = render(t)
        problems = validate_app(parse_app(text))
        if problems:
            for p in problems:
                print(f"{t.name}: {p}", file=sys.stderr)
            return 1
        (out / f"{t.name}.oapp").write_text(text)
        print(f"wrote {out / (t.name + '.oapp')}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
