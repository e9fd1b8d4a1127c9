"""Order-preserving tree model for AutomationML/CAEX manifests.

The parser is built directly on expat so that attribute order, comments and
processing instructions survive a round trip. Element names are kept verbatim
(namespace prefixes included); nothing is resolved or validated against the
IEC 62424 schema.

Whitespace-only text between elements is insignificant and dropped. Text of
leaf elements (``Value``, ``Description``...) is kept exactly, and non-blank
text inside elements that also have child nodes is kept as :class:`Text`
nodes so mixed content is not lost.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Union
from xml.parsers import expat

from mtpenergy.errors import MtpEnergyError, ParseError


class CaexError(MtpEnergyError):
    pass


class MalformedXml(CaexError, ParseError):
    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class EmptyDocument(CaexError, ParseError):
    pass


class UnsupportedDoctype(CaexError, ParseError):
    pass


class AmbiguousPath(CaexError):
    pass


class DuplicateId(CaexError):
    pass


class IndexOutOfRange(CaexError, IndexError):
    pass


@dataclass
class Comment:
    text: str


@dataclass
class ProcessingInstruction:
    target: str
    data: str


@dataclass
class Text:
    text: str


@dataclass
class CaexElement:
    name: str
    xml_attributes: list[tuple[str, str]] = field(default_factory=list)
    children: list[Node] = field(default_factory=list)
    text_content: str | None = None

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.xml_attributes:
            if k == key:
                return v
        return default

    def set(self, key: str, value: str) -> None:
        """Set an xml attribute, keeping its position if it already exists."""
        for i, (k, _) in enumerate(self.xml_attributes):
            if k == key:
                self.xml_attributes[i] = (key, value)
                return
        self.xml_attributes.append((key, value))

    @property
    def elements(self) -> list[CaexElement]:
        return [c for c in self.children if isinstance(c, CaexElement)]

    def child(self, name: str, tag: str | None = None) -> CaexElement | None:
        """First child element whose ``Name`` attribute is *name*."""
        for c in self.elements:
            if c.get("Name") == name and (tag is None or c.name == tag):
                return c
        return None

    def iter(self) -> Iterator[CaexElement]:
        """Depth-first, document-order walk including self."""
        yield self
        for c in self.elements:
            yield from c.iter()


Node = Union[CaexElement, Comment, ProcessingInstruction, Text]


@dataclass
class CaexDocument:
    root: CaexElement
    source_name: str = "<memory>"
    xml_declaration: bool = False
    prolog: list[Node] = field(default_factory=list)
    epilog: list[Node] = field(default_factory=list)

    def __eq__(self, other: object) -> bool:
        # source_name is provenance only; structure decides equality.
        if not isinstance(other, CaexDocument):
            return NotImplemented
        return (
            self.root == other.root
            and self.prolog == other.prolog
            and self.epilog == other.epilog
        )

    def copy(self) -> CaexDocument:
        return copy.deepcopy(self)

    def iter(self) -> Iterator[CaexElement]:
        return self.root.iter()


@dataclass(frozen=True)
class ElementPath:
    segments: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("ElementPath needs at least one segment")
        for s in self.segments:
            if "/" in s:
                raise ValueError(f"path segment {s!r} contains '/'")

    @classmethod
    def parse(cls, text: str) -> ElementPath:
        return cls(tuple(s for s in text.split("/") if s))

    def __truediv__(self, segment: str) -> ElementPath:
        return ElementPath(self.segments + (segment,))

    def __str__(self) -> str:
        return "/".join(self.segments)


def _as_path(path: ElementPath | str | tuple[str, ...] | list[str]) -> ElementPath:
    if isinstance(path, ElementPath):
        return path
    if isinstance(path, str):
        return ElementPath.parse(path)
    return ElementPath(tuple(path))


# -- parsing ---------------------------------------------------------------


class _Builder:
    def __init__(self) -> None:
        self.stack: list[CaexElement] = []
        self.has_nodes: list[bool] = []
        self.buffer: list[str] = []
        self.root: CaexElement | None = None
        self.prolog: list[Node] = []
        self.epilog: list[Node] = []
        self.xml_declaration = False

    def _flush_mixed(self) -> None:
        text = "".join(self.buffer)
        self.buffer.clear()
        if self.stack and text.strip():
            self.stack[-1].children.append(Text(text))

    def _add_node(self, node: Node) -> None:
        if self.stack:
            self._flush_mixed()
            self.stack[-1].children.append(node)
            self.has_nodes[-1] = True
        elif self.root is None:
            self.prolog.append(node)
        else:
            self.epilog.append(node)

    def start(self, name: str, attrs: list[str]) -> None:
        pairs = list(zip(attrs[0::2], attrs[1::2]))
        elem = CaexElement(name, pairs)
        if not self.stack:
            self.root = elem
            self.buffer.clear()
        else:
            self._add_node(elem)
        self.stack.append(elem)
        self.has_nodes.append(False)

    def end(self, name: str) -> None:
        elem = self.stack[-1]
        if self.has_nodes[-1]:
            self._flush_mixed()
        else:
            text = "".join(self.buffer)
            self.buffer.clear()
            elem.text_content = text or None
        self.stack.pop()
        self.has_nodes.pop()

    def chars(self, data: str) -> None:
        if self.stack:
            self.buffer.append(data)

    def comment(self, data: str) -> None:
        self._add_node(Comment(data))

    def pi(self, target: str, data: str) -> None:
        self._add_node(ProcessingInstruction(target, data))

    def xml_decl(self, version, encoding, standalone) -> None:
        self.xml_declaration = True

    def doctype(self, *args) -> None:
        raise UnsupportedDoctype("DOCTYPE declarations are not supported")


def parse_caex(text: str | bytes, source_name: str = "<memory>") -> CaexDocument:
    """Parse CAEX XML text into a :class:`CaexDocument`.

    Raises MalformedXml (with line/column), EmptyDocument when the input holds
    no element, and UnsupportedDoctype for any DOCTYPE declaration.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise MalformedXml(f"invalid UTF-8: {exc.reason}", 1, exc.start) from exc
    if text.startswith("\ufeff"):
        text = text[1:]

    b = _Builder()
    parser = expat.ParserCreate(encoding="utf-8")
    parser.ordered_attributes = True
    parser.buffer_text = True
    parser.StartElementHandler = b.start
    parser.EndElementHandler = b.end
    parser.CharacterDataHandler = b.chars
    parser.CommentHandler = b.comment
    parser.ProcessingInstructionHandler = b.pi
    parser.XmlDeclHandler = b.xml_decl
    parser.StartDoctypeDeclHandler = b.doctype
    parser.EntityDeclHandler = b.doctype
    try:
        parser.Parse(text.encode("utf-8"), True)
    except expat.ExpatError as exc:
        if exc.code == expat.errors.codes[expat.errors.XML_ERROR_NO_ELEMENTS] and b.root is None:
            raise EmptyDocument(f"{source_name}: document contains no element") from exc
        raise MalformedXml(expat.errors.messages[exc.code], exc.lineno, exc.offset + 1) from exc
    assert b.root is not None
    return CaexDocument(
        root=b.root,
        source_name=source_name,
        xml_declaration=b.xml_declaration,
        prolog=b.prolog,
        epilog=b.epilog,
    )


def load_caex(path: str | Path) -> CaexDocument:
    path = Path(path)
    return parse_caex(path.read_bytes(), source_name=str(path))


# -- serialization ---------------------------------------------------------


def _escape_text(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace("\r", "&#13;")


def _escape_attr(s: str) -> str:
    return (
        _escape_text(s)
        .replace('"', "&quot;")
        .replace("\t", "&#9;")
        .replace("\n", "&#10;")
    )


def _open_tag(elem: CaexElement) -> str:
    attrs = "".join(f' {k}="{_escape_attr(v)}"' for k, v in elem.xml_attributes)
    return f"<{elem.name}{attrs}"


def _node_inline(node: Node) -> str:
    if isinstance(node, Comment):
        return f"<!--{node.text}-->"
    if isinstance(node, ProcessingInstruction):
        return f"<?{node.target} {node.data}?>" if node.data else f"<?{node.target}?>"
    if isinstance(node, Text):
        return _escape_text(node.text)
    head = _open_tag(node)
    if node.children:
        inner = "".join(_node_inline(c) for c in node.children)
        return f"{head}>{inner}</{node.name}>"
    if node.text_content:
        return f"{head}>{_escape_text(node.text_content)}</{node.name}>"
    return f"{head}/>"


def _write(node: Node, depth: int, out: list[str], indent: str) -> None:
    pad = indent * depth
    if not isinstance(node, CaexElement) or not node.children:
        out.append(pad + _node_inline(node))
        return
    if any(isinstance(c, Text) for c in node.children):
        # mixed content: indentation would change the text, emit inline
        out.append(pad + _node_inline(node))
        return
    out.append(f"{pad}{_open_tag(node)}>")
    for c in node.children:
        _write(c, depth + 1, out, indent)
    out.append(f"{pad}</{node.name}>")


def serialize_element(elem: Node, indent: str = "  ") -> str:
    out: list[str] = []
    _write(elem, 0, out, indent)
    return "\n".join(out)


def serialize_caex(doc: CaexDocument, indent: str = "  ") -> str:
    """Canonical serialization: fixed indentation, attributes in source order."""
    out: list[str] = []
    if doc.xml_declaration:
        out.append('<?xml version="1.0" encoding="utf-8"?>')
    for n in doc.prolog:
        _write(n, 0, out, indent)
    _write(doc.root, 0, out, indent)
    for n in doc.epilog:
        _write(n, 0, out, indent)
    return "\n".join(out) + "\n"


def save_caex(doc: CaexDocument, path: str | Path) -> None:
    Path(path).write_text(serialize_caex(doc), encoding="utf-8")


# -- navigation and mutation -----------------------------------------------


def find_by_path(
    doc: CaexDocument | CaexElement, path: ElementPath | str | tuple[str, ...] | list[str]
) -> CaexElement | None:
    """Follow *path* by ``Name`` attribute, one child level per segment.

    The first segment is matched against the children of the document root.
    """
    node = doc.root if isinstance(doc, CaexDocument) else doc
    p = _as_path(path)
    for depth, segment in enumerate(p.segments):
        matches = [c for c in node.elements if c.get("Name") == segment]
        if not matches:
            return None
        if len(matches) > 1:
            where = "/".join(p.segments[: depth + 1])
            raise AmbiguousPath(f"{len(matches)} elements match {where!r}")
        node = matches[0]
    return node


def find_by_id(doc: CaexDocument, id: str) -> CaexElement | None:
    found = [e for e in doc.iter() if e.get("ID") == id]
    if len(found) > 1:
        raise DuplicateId(f"ID {id} is used by {len(found)} elements")
    return found[0] if found else None


def find_parent(doc: CaexDocument, target: Node) -> CaexElement | None:
    for e in doc.iter():
        if any(c is target for c in e.children):
            return e
    return None


def insert_child(parent: CaexElement, child: Node, position: int | None = None) -> None:
    """Insert *child* into *parent* at *position* (``None`` appends)."""
    if position is None:
        parent.children.append(child)
        return
    if position < 0 or position > len(parent.children):
        raise IndexOutOfRange(
            f"position {position} outside 0..{len(parent.children)} for {parent.name}"
        )
    parent.children.insert(position, child)


# -- small CAEX helpers used by the injector -------------------------------


def make_attribute(
    name: str,
    value: str | None = None,
    data_type: str | None = None,
    description: str | None = None,
    ref_type: str | None = None,
) -> CaexElement:
    attrs = [("Name", name)]
    if data_type:
        attrs.append(("AttributeDataType", data_type))
    if ref_type:
        attrs.append(("RefAttributeType", ref_type))
    elem = CaexElement("Attribute", attrs)
    if description is not None:
        elem.children.append(CaexElement("Description", text_content=description or None))
    if value is not None:
        elem.children.append(CaexElement("Value", text_content=value or None))
    return elem


def attribute_elements(elem: CaexElement) -> list[CaexElement]:
    return [c for c in elem.elements if c.name == "Attribute"]


def attribute_value(elem: CaexElement, name: str) -> str | None:
    """Text of the ``Value`` child of the CAEX ``Attribute`` called *name*."""
    for a in attribute_elements(elem):
        if a.get("Name") == name:
            for v in a.elements:
                if v.name == "Value":
                    return v.text_content or ""
            return None
    return None
