"""Lifted factorization trees.

A factorization is a rooted labeled tree with one vertex per atom group (a
predicate cell).  Each free position class of a vertex is tagged C (lifted
sum), D (decomposed) or G (grounded).  A vertex's ``edge_vars`` hold the
logical variables decomposing the subtree rooted at it into identical
independent copies; the variables bind in lockstep, one copy per constant of
their shared domain.  ``edge_vars`` on the root expresses a root-level
lifted product.
"""
from __future__ import annotations

from dataclasses import dataclass

from .mln import GroupKey, group_id_str

__all__ = ["FactorizationNode", "tree_vertices", "tree_paths",
           "factorization_to_text"]


@dataclass(frozen=True)
class FactorizationNode:
    group: GroupKey
    tags: tuple[str, ...]  # one per position; same-class positions agree
    edge_vars: frozenset = frozenset()
    children: tuple["FactorizationNode", ...] = ()

    def class_tags(self) -> dict[int, str]:
        """Tag per variable class of the cell (constant positions skipped)."""
        out: dict[int, str] = {}
        for (kind, val), tag in zip(self.group.slots, self.tags):
            if kind != "var":
                continue
            if out.setdefault(val, tag) != tag:
                raise ValueError(
                    f"{group_id_str(self.group)}: positions of one class "
                    f"carry different tags")
        return out

    def counted(self) -> bool:
        """Whole cell handled by a single lifted sum."""
        tags = self.class_tags()
        return all(t == "C" for t in tags.values()) if tags else True


def tree_vertices(root: FactorizationNode) -> list[FactorizationNode]:
    out = [root]
    for child in root.children:
        out.extend(tree_vertices(child))
    return out


def tree_paths(root: FactorizationNode) -> list[list[FactorizationNode]]:
    """All root-to-leaf vertex paths."""
    if not root.children:
        return [[root]]
    return [[root] + rest
            for child in root.children
            for rest in tree_paths(child)]


def factorization_to_text(root: FactorizationNode, indent: int = 0) -> str:
    label = f"{root.group.pred}({','.join(root.tags) if root.tags else ''})"
    if root.group.ne_pairs or any(k == "const" for k, _ in root.group.slots):
        label += f" cell={group_id_str(root.group)}"
    prefix = "  " * indent
    if root.edge_vars:
        shown = ",".join(sorted(v.split("#")[0] for v in root.edge_vars))
        label = f"--{{{shown}}}--> {label}"
    lines = [prefix + label]
    for child in root.children:
        lines.append(factorization_to_text(child, indent + 1))
    return "\n".join(lines)
