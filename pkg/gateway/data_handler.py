"""
XML <-> JSON conversion.

Mapping (both directions):

    <e/>                          {"e": null}
    <e>text</e>                   {"e": "text"}
    <e name="value"/>             {"e": {"@name": "value"}}
    <e name="value">text</e>      {"e": {"@name": "value", "#text": "text"}}
    <e><a>text</a><b>text</b></e> {"e": {"a": "text", "b": "text"}}
    <e><a>text</a><a>text</a></e> {"e": {"a": ["text", "text"]}}
    <e>text<a>text</a></e>        {"e": {"#text": "text", "a": "text"}}

'-name' and '-#text' are read as '@name' and '#text'. Both directions go
through DocNode trees, built and printed with explicit stacks; documents
deeper than MAX_DEPTH are rejected.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from json.decoder import scanstring
from json.scanner import NUMBER_RE
from typing import Any, Iterator, List, Optional, Sequence, Tuple

import pandas as pd
from lxml import etree

from gateway.errors import DepthExceeded, EntityUnsupported, MultipleRoots, ParseError
from gateway.files import write_atomic

MAX_DEPTH: int = 1000
DECLARATION: str = '<?xml version="1.0" encoding="UTF-8"?>'

ATTRIBUTE_PREFIXES: Tuple[str, ...] = ("@", "-")
TEXT_KEYS: Tuple[str, ...] = ("#text", "-#text")
FORMATS: Tuple[str, ...] = ("xml", "json")

_PREDEFINED_ENTITIES = {"amp", "lt", "gt", "quot", "apos"}
_ENTITY_RE = re.compile(r"&([A-Za-z_][\w.\-]*);")
_NAME_RE = re.compile(r"[^\W\d][\w.\-]*")


@dataclass
class DocNode:
    """One element: attributes and children in document order, joined text."""

    name: str
    attributes: List[Tuple[str, str]] = field(default_factory=list)
    children: List["DocNode"] = field(default_factory=list)
    text: Optional[str] = None
    # number of children that precede the text
    text_position: int = 0

    def iter(self) -> Iterator["DocNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def depth(self) -> int:
        deepest = 0
        stack = [(self, 1)]
        while stack:
            node, level = stack.pop()
            deepest = max(deepest, level)
            stack.extend((c, level + 1) for c in node.children)
        return deepest


def _check_depth(level: int) -> None:
    if level > MAX_DEPTH:
        raise DepthExceeded(f"Document is nested deeper than {MAX_DEPTH} levels.")


# -------------------------
# XML side
# -------------------------
def parse_xml(text: str) -> DocNode:
    if re.search(r"<!(DOCTYPE|ENTITY)", text):
        raise EntityUnsupported("DTDs and entity declarations are not supported.")
    for match in _ENTITY_RE.finditer(text):
        if match.group(1) not in _PREDEFINED_ENTITIES:
            raise EntityUnsupported(f"Entity &{match.group(1)}; is not supported.")

    parser = etree.XMLPullParser(
        events=("start", "end"),
        resolve_entities=False,
        huge_tree=True,
        remove_comments=True,
        remove_pis=True,
        no_network=True,
    )
    stack: List[DocNode] = []
    root: Optional[DocNode] = None
    try:
        parser.feed(text.encode("utf-8"))
        parser.close()
    except etree.XMLSyntaxError as e:
        if "depth" in str(e.msg).lower():
            raise DepthExceeded(f"Document is nested deeper than {MAX_DEPTH} levels.") from None
        line, column = e.position
        raise ParseError(e.msg, line, column) from None

    for event, elem in parser.read_events():
        if event == "start":
            _check_depth(len(stack) + 1)
            node = DocNode(etree.QName(elem).localname, [(k, v) for k, v in elem.attrib.items()])
            if stack:
                stack[-1].children.append(node)
            else:
                root = node
            stack.append(node)
        else:
            node = stack.pop()
            segments = [(0, elem.text)] + [(i + 1, child.tail) for i, child in enumerate(elem)]
            # segments lose surrounding whitespace, so " a " reads back as "a"
            kept = [(i, s.strip()) for i, s in segments if s and s.strip()]
            if kept:
                node.text_position = kept[0][0]
                node.text = "".join(s for _, s in kept)
    if root is None:
        raise ParseError("document has no root element")
    return root


def _to_lxml(root: DocNode) -> etree._Element:
    top = etree.Element(root.name, dict(root.attributes))
    stack = [(root, top)]
    while stack:
        node, elem = stack.pop()
        subs = [etree.SubElement(elem, c.name, dict(c.attributes)) for c in node.children]
        if node.text is not None:
            if node.text_position == 0:
                elem.text = node.text
            else:
                subs[node.text_position - 1].tail = node.text
        stack.extend(zip(node.children, subs))
    return top


def write_xml(root: DocNode) -> str:
    try:
        body = etree.tostring(_to_lxml(root), encoding="unicode")
    except ValueError as e:
        # lxml refuses control characters and other XML-illegal text
        raise ParseError(str(e)) from None
    return DECLARATION + "\n" + body + "\n"


# -------------------------
# JSON side
# -------------------------
class _Members(list):
    """Object members as an ordered list of pairs."""


def _bracket_depth(text: str) -> int:
    deepest = level = 0
    in_string = escaped = False
    for ch in text:
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch in "[{":
            level += 1
            deepest = max(deepest, level)
        elif ch in "]}":
            level -= 1
    return deepest


_WS_RE = re.compile(r"[ \t\n\r]*")
_LITERALS: Tuple[Tuple[str, Any], ...] = (("null", None), ("true", True), ("false", False))


def _skip(text: str, pos: int) -> int:
    return _WS_RE.match(text, pos).end()


def _read_key(text: str, pos: int, keys: List[str]) -> int:
    if text[pos:pos + 1] != '"':
        raise json.JSONDecodeError("Expecting property name enclosed in double quotes", text, pos)
    key, pos = scanstring(text, pos + 1)
    pos = _skip(text, pos)
    if text[pos:pos + 1] != ":":
        raise json.JSONDecodeError("Expecting ':' delimiter", text, pos)
    keys.append(key)
    return _skip(text, pos + 1)


def _read_scalar(text: str, pos: int) -> Tuple[Any, int]:
    if text[pos:pos + 1] == '"':
        return scanstring(text, pos + 1)
    match = NUMBER_RE.match(text, pos)
    if match:
        integer, frac, exp = match.groups()
        value = float(integer + (frac or "") + (exp or "")) if frac or exp else int(integer)
        return value, match.end()
    for literal, value in _LITERALS:
        if text.startswith(literal, pos):
            return value, pos + len(literal)
    raise json.JSONDecodeError("Expecting value", text, pos)


def _load_json(text: str) -> Any:
    """json.loads(text, object_pairs_hook=_Members) on an explicit stack."""
    containers: List[list] = []
    keys: List[str] = []
    pos = _skip(text, 0)
    while True:
        opener = text[pos:pos + 1]
        if opener in ("{", "["):
            container: list = _Members() if opener == "{" else []
            pos = _skip(text, pos + 1)
            if text[pos:pos + 1] != ("}" if opener == "{" else "]"):
                containers.append(container)
                if opener == "{":
                    pos = _read_key(text, pos, keys)
                continue
            value, pos = container, pos + 1
        else:
            value, pos = _read_scalar(text, pos)

        # attach the finished value, closing containers as they end
        while True:
            if not containers:
                pos = _skip(text, pos)
                if pos != len(text):
                    raise json.JSONDecodeError("Extra data", text, pos)
                return value
            top = containers[-1]
            top.append((keys.pop(), value) if isinstance(top, _Members) else value)
            pos = _skip(text, pos)
            ch = text[pos:pos + 1]
            if ch == ",":
                pos = _skip(text, pos + 1)
                if isinstance(top, _Members):
                    pos = _read_key(text, pos, keys)
                break
            if ch != ("}" if isinstance(top, _Members) else "]"):
                raise json.JSONDecodeError("Expecting ',' delimiter", text, pos)
            value, pos = containers.pop(), pos + 1


def _scalar_text(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return value
    return json.dumps(value)


def _valid_name(name: str) -> str:
    if not _NAME_RE.fullmatch(name):
        raise ParseError(f"{name!r} is not a valid element name")
    return name


def parse_json(text: str) -> DocNode:
    # an element level costs at most an object and an array
    if _bracket_depth(text) > 2 * MAX_DEPTH + 1:
        raise DepthExceeded(f"Document is nested deeper than {MAX_DEPTH} levels.")
    try:
        data = _load_json(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno, e.colno) from None

    if not isinstance(data, _Members) or not data:
        raise ParseError("document must be an object with one root member")
    if len(data) > 1:
        raise MultipleRoots(f"XML needs one root element, got {len(data)}: {[k for k, _ in data]}.")

    name, value = data[0]
    if isinstance(value, list) and not isinstance(value, _Members):
        raise MultipleRoots(f"Root member {name!r} holds an array.")
    root = DocNode(_valid_name(name))
    stack: List[Tuple[DocNode, Any, int]] = [(root, value, 1)]
    while stack:
        node, value, level = stack.pop()
        _check_depth(level)
        if value is None:
            continue
        if not isinstance(value, _Members):
            if isinstance(value, list):
                raise ParseError(f"nested array under {node.name!r}")
            node.text = _scalar_text(value)
            continue
        pending: List[Tuple[DocNode, Any, int]] = []
        for key, member in value:
            if key in TEXT_KEYS:
                if node.text is not None:
                    raise ParseError(f"two text members in {node.name!r}")
                node.text = _scalar_text(member) if member is not None else ""
                node.text_position = len(node.children)
            elif key[:1] in ATTRIBUTE_PREFIXES:
                attr = _valid_name(key[1:])
                if any(a == attr for a, _ in node.attributes):
                    raise ParseError(f"attribute {attr!r} given twice in {node.name!r}")
                node.attributes.append((attr, _scalar_text(member) if member is not None else ""))
            else:
                items = member if isinstance(member, list) and not isinstance(member, _Members) else [member]
                for item in items:
                    child = DocNode(_valid_name(key))
                    node.children.append(child)
                    pending.append((child, item, level + 1))
        stack.extend(reversed(pending))
    return root


def _json_value_tokens(node: DocNode) -> List[Any]:
    """Tokens for one element value: strings are written, DocNodes expanded."""
    if not node.attributes and not node.children:
        return ["null" if node.text is None else json.dumps(node.text, ensure_ascii=False)]

    groups: dict = {}
    for child in node.children:
        groups.setdefault(child.name, []).append(child)

    members: List[Tuple[str, List[Any]]] = [
        ("@" + name, [json.dumps(value, ensure_ascii=False)]) for name, value in node.attributes
    ]
    text_member = ("#text", [json.dumps(node.text, ensure_ascii=False)]) if node.text is not None else None
    seen = set()
    for i, child in enumerate(node.children):
        if text_member and i == node.text_position:
            members.append(text_member)
            text_member = None
        if child.name in seen:
            continue
        seen.add(child.name)
        group = groups[child.name]
        if len(group) == 1:
            members.append((child.name, [group[0]]))
        else:
            tokens: List[Any] = ["["]
            for j, member in enumerate(group):
                if j:
                    tokens.append(", ")
                tokens.append(member)
            tokens.append("]")
            members.append((child.name, tokens))
    if text_member:
        members.append(text_member)

    out: List[Any] = ["{"]
    for i, (key, tokens) in enumerate(members):
        if i:
            out.append(", ")
        out.append(json.dumps(key, ensure_ascii=False) + ": ")
        out.extend(tokens)
    out.append("}")
    return out


def write_json(root: DocNode) -> str:
    parts: List[str] = []
    stack: List[Any] = ["}", root, json.dumps(root.name, ensure_ascii=False) + ": ", "{"]
    while stack:
        token = stack.pop()
        if isinstance(token, DocNode):
            stack.extend(reversed(_json_value_tokens(token)))
        else:
            parts.append(token)
    return "".join(parts)


# -------------------------
# Operations
# -------------------------
def xml_to_json(text: str) -> str:
    return write_json(parse_xml(text))


def json_to_xml(text: str) -> str:
    return write_xml(parse_json(text))


def detect_format(path: str, text: Optional[str] = None) -> str:
    ext = os.path.splitext(path)[1].lower().lstrip(".")
    if ext in FORMATS:
        return ext
    if text is not None:
        return "xml" if text.lstrip().startswith("<") else "json"
    raise ValueError(f"Cannot tell the format of {path!r}.")


def convert_file(path: str, target: str) -> str:
    """
    Convert `path` to the other format and write `<basename>.<target>`.

    Returns:
        The output path.

    Raises:
        ValueError: target is not 'xml'/'json' or equals the source format.
        FileNotFoundError: `path` does not exist.
        GatewayError: the document cannot be converted.
    """
    if target not in FORMATS:
        raise ValueError(f"Target must be one of {FORMATS}, got {target!r}.")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except UnicodeDecodeError as e:
        raise ParseError(f"{path} is not UTF-8: {e.reason}") from None
    source = detect_format(path, text)
    if source == target:
        raise ValueError(f"{path} is already {target}.")

    output = xml_to_json(text) + "\n" if target == "json" else json_to_xml(text)
    out_path = os.path.splitext(path)[0] + "." + target
    return write_atomic(out_path, output)


def document_stats(text: str, source: str) -> dict:
    root = parse_xml(text) if source == "xml" else parse_json(text)
    return {
        "depth": root.depth(),
        "lines": text.count("\n") + (0 if text.endswith("\n") else 1),
        "objects": sum(1 for _ in root.iter()),
    }


def benchmark_conversion(paths: Sequence[str], repeat: int = 5) -> pd.DataFrame:
    """
    Time the conversion of each document (mean over `repeat` runs, in us).

    Returns:
        One row per document: path, depth, lines, objects, time.
    """
    if repeat < 1:
        raise ValueError("repeat must be >= 1.")
    rows = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        source = detect_format(path, text)
        convert = xml_to_json if source == "xml" else json_to_xml
        elapsed = 0
        for _ in range(repeat):
            start = time.perf_counter_ns()
            convert(text)
            elapsed += time.perf_counter_ns() - start
        row = {"path": path}
        row.update(document_stats(text, source))
        row["time"] = elapsed / repeat / 1000.0
        rows.append(row)
    return pd.DataFrame(rows, columns=["path", "depth", "lines", "objects", "time"])
