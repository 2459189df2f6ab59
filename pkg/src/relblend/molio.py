"""Molecule interchange: V2000 molfile subset and canonical JSON.

A molecule is atoms (element codes), typed undirected bonds, and optional
3D coordinates in Angstrom. The element vocabulary is fixed at build time;
symbols outside it degrade to the UNKNOWN code (serialized as ``*``).

Parsing is total: every input yields either a valid :class:`Molecule` or a
structured error (:class:`MolfileError` with a line number,
:class:`JsonSchemaError` with a JSON path). Charge/isotope/stereo property
lines are ignored with a warning.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

__all__ = [
    "ELEMENTS",
    "UNKNOWN_CODE",
    "VOCAB_SIZE",
    "BOND_TYPES",
    "Molecule",
    "MoleculeError",
    "MolfileError",
    "JsonSchemaError",
    "parse_molfile",
    "parse_json",
    "serialize_json",
]

# Fixed element vocabulary: codes dense from 0, UNKNOWN last.
ELEMENTS: dict[str, int] = {
    "H": 0,
    "C": 1,
    "N": 2,
    "O": 3,
    "F": 4,
    "P": 5,
    "S": 6,
    "Cl": 7,
    "Br": 8,
    "I": 9,
    "*": 10,  # UNKNOWN
}
UNKNOWN_CODE = ELEMENTS["*"]
VOCAB_SIZE = len(ELEMENTS)
_CODE_TO_SYMBOL = {code: sym for sym, code in ELEMENTS.items()}

# Bond types: 1=single, 2=double, 3=triple, 4=aromatic.
BOND_TYPES = (1, 2, 3, 4)


class MoleculeError(ValueError):
    """A structurally invalid molecule."""


class MolfileError(MoleculeError):
    """Molfile parse failure, carrying the 1-based offending line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class JsonSchemaError(MoleculeError):
    """JSON interchange schema violation, carrying the JSON path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Molecule:
    """Atoms, typed undirected bonds, optional coordinates.

    ``atom_types`` are element codes. Bonds are normalized to
    ``i < j``, sorted, and unique; ``coords`` (if present) has one
    (x, y, z) triple per atom, in Angstrom.
    """

    atom_types: tuple[int, ...]
    bonds: tuple[tuple[int, int, int], ...] = ()
    coords: tuple[tuple[float, float, float], ...] | None = None

    def __post_init__(self):
        n = len(self.atom_types)
        if n < 1:
            raise MoleculeError("molecule needs at least one atom")
        for k, code in enumerate(self.atom_types):
            if not 0 <= code < VOCAB_SIZE:
                raise MoleculeError(f"atom {k}: element code {code} out of range")
        seen: set[tuple[int, int]] = set()
        for i, j, t in self.bonds:
            if i == j:
                raise MoleculeError(f"self-bond on atom {i}")
            if not (0 <= i < j < n):
                raise MoleculeError(f"bond ({i}, {j}) endpoints out of range for {n} atoms")
            if t not in BOND_TYPES:
                raise MoleculeError(f"bond ({i}, {j}): type {t} not in {BOND_TYPES}")
            if (i, j) in seen:
                raise MoleculeError(f"duplicate bond ({i}, {j})")
            seen.add((i, j))
        if self.coords is not None and len(self.coords) != n:
            raise MoleculeError(
                f"{len(self.coords)} coordinate rows for {n} atoms"
            )

    @property
    def n_atoms(self) -> int:
        return len(self.atom_types)


def make_molecule(atom_types, bonds, coords=None) -> Molecule:
    """Build a Molecule, normalizing bond order and sorting."""
    normalized = []
    for i, j, t in bonds:
        if i > j:
            i, j = j, i
        normalized.append((int(i), int(j), int(t)))
    normalized.sort()
    coords_t = None
    if coords is not None:
        coords_t = tuple((float(x), float(y), float(z)) for x, y, z in coords)
    return Molecule(
        atom_types=tuple(int(a) for a in atom_types),
        bonds=tuple(normalized),
        coords=coords_t,
    )


def symbol_to_code(symbol: str) -> int:
    """Element code for a symbol; unknown symbols map to UNKNOWN."""
    return ELEMENTS.get(symbol, UNKNOWN_CODE)


# ---------------------------------------------------------------------------
# Molfile (V2000 subset)
# ---------------------------------------------------------------------------

_IGNORED_PROPERTIES = ("M  CHG", "M  ISO", "M  RAD", "M  STY")


def parse_molfile(text: str) -> Molecule:
    """Parse the V2000 molfile subset: header, counts, atoms, bonds, M  END.

    Fields are whitespace-tokenized (exact column positions not required).
    Molfile 1-based atom indices become 0-based; bond endpoints are
    normalized to i < j.
    """
    lines = text.splitlines()
    if len(lines) < 4:
        raise MolfileError(len(lines) + 1, "truncated molfile: missing counts line")

    counts_no = 4  # counts line is the 4th line (after 3 header lines)
    tokens = lines[3].split()
    if len(tokens) < 2:
        raise MolfileError(counts_no, "counts line needs atom and bond counts")
    try:
        n_atoms, n_bonds = int(tokens[0]), int(tokens[1])
    except ValueError:
        raise MolfileError(counts_no, f"malformed counts line: {lines[3]!r}") from None
    if n_atoms < 1:
        raise MolfileError(counts_no, f"atom count must be >= 1, got {n_atoms}")
    if n_bonds < 0:
        raise MolfileError(counts_no, f"negative bond count {n_bonds}")

    atom_types: list[int] = []
    coords: list[tuple[float, float, float]] = []
    for k in range(n_atoms):
        line_no = 5 + k
        if 4 + k >= len(lines):
            raise MolfileError(line_no, "unexpected end of file in atom block")
        parts = lines[4 + k].split()
        if len(parts) < 4:
            raise MolfileError(line_no, f"atom line needs x y z symbol: {lines[4 + k]!r}")
        try:
            x, y, z = float(parts[0]), float(parts[1]), float(parts[2])
        except ValueError:
            raise MolfileError(line_no, f"malformed coordinates: {lines[4 + k]!r}") from None
        atom_types.append(symbol_to_code(parts[3]))
        coords.append((x, y, z))

    bonds: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int]] = set()
    for k in range(n_bonds):
        line_no = 5 + n_atoms + k
        if 4 + n_atoms + k >= len(lines):
            raise MolfileError(line_no, "unexpected end of file in bond block")
        parts = lines[4 + n_atoms + k].split()
        if len(parts) < 3:
            raise MolfileError(line_no, f"bond line needs i j type: {lines[4 + n_atoms + k]!r}")
        try:
            i, j, t = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            raise MolfileError(line_no, f"malformed bond line: {lines[4 + n_atoms + k]!r}") from None
        i, j = i - 1, j - 1  # molfile indices are 1-based
        if i == j:
            raise MolfileError(line_no, f"self-bond on atom {i + 1}")
        if not (0 <= i < n_atoms and 0 <= j < n_atoms):
            raise MolfileError(line_no, f"bond atom index out of range: {i + 1}, {j + 1}")
        if i > j:
            i, j = j, i
        if (i, j) in seen:
            raise MolfileError(line_no, f"duplicate bond ({i + 1}, {j + 1})")
        if t not in BOND_TYPES:
            raise MolfileError(line_no, f"bond type {t} not in {BOND_TYPES}")
        seen.add((i, j))
        bonds.append((i, j, t))

    tail_start = 4 + n_atoms + n_bonds
    for offset, line in enumerate(lines[tail_start:]):
        if line.startswith("M  END"):
            return make_molecule(atom_types, bonds, coords)
        if line.startswith(_IGNORED_PROPERTIES):
            warnings.warn(
                f"line {tail_start + offset + 1}: ignoring property block {line[:6]!r}",
                stacklevel=2,
            )
    raise MolfileError(len(lines) + 1, 'missing "M  END"')


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------


def parse_json(text: str) -> Molecule:
    """Parse the JSON interchange form.

    Schema: object with ``atoms`` (symbols or codes), ``bonds``
    (``[i, j, type]`` triples), optional ``coords`` (``[x, y, z]`` rows).
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise JsonSchemaError("$", f"invalid JSON: {exc}") from None
    return molecule_from_obj(obj)


def molecule_from_obj(obj, root: str = "$") -> Molecule:
    """Validate a decoded JSON object into a Molecule."""
    if not isinstance(obj, dict):
        raise JsonSchemaError(root, "expected an object")
    unknown = set(obj) - {"atoms", "bonds", "coords"}
    if unknown:
        raise JsonSchemaError(root, f"unknown keys {sorted(unknown)}")
    if "atoms" not in obj:
        raise JsonSchemaError(root + ".atoms", "missing required key")

    atoms_raw = obj["atoms"]
    if not isinstance(atoms_raw, list) or not atoms_raw:
        raise JsonSchemaError(root + ".atoms", "expected a non-empty array")
    atom_types: list[int] = []
    for k, a in enumerate(atoms_raw):
        if isinstance(a, str):
            atom_types.append(symbol_to_code(a))
        elif isinstance(a, int) and not isinstance(a, bool):
            if not 0 <= a < VOCAB_SIZE:
                raise JsonSchemaError(f"{root}.atoms[{k}]", f"element code {a} out of range")
            atom_types.append(a)
        else:
            raise JsonSchemaError(f"{root}.atoms[{k}]", "expected symbol or integer code")

    bonds_raw = obj.get("bonds", [])
    if not isinstance(bonds_raw, list):
        raise JsonSchemaError(root + ".bonds", "expected an array")
    bonds: list[tuple[int, int, int]] = []
    for k, b in enumerate(bonds_raw):
        loc = f"{root}.bonds[{k}]"
        if not (isinstance(b, list) and len(b) == 3):
            raise JsonSchemaError(loc, "expected [i, j, type]")
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in b):
            raise JsonSchemaError(loc, "bond entries must be integers")
        i, j, t = b
        if i == j:
            raise JsonSchemaError(loc, f"self-bond on atom {i}")
        if not (0 <= i < len(atom_types) and 0 <= j < len(atom_types)):
            raise JsonSchemaError(loc, f"bond atom index out of range: {i}, {j}")
        if t not in BOND_TYPES:
            raise JsonSchemaError(loc, f"bond type {t} not in {BOND_TYPES}")
        bonds.append((i, j, t))

    coords = None
    if "coords" in obj and obj["coords"] is not None:
        coords_raw = obj["coords"]
        if not isinstance(coords_raw, list):
            raise JsonSchemaError(root + ".coords", "expected an array")
        if len(coords_raw) != len(atom_types):
            raise JsonSchemaError(
                root + ".coords",
                f"{len(coords_raw)} rows for {len(atom_types)} atoms",
            )
        coords = []
        for k, row in enumerate(coords_raw):
            loc = f"{root}.coords[{k}]"
            if not (isinstance(row, list) and len(row) == 3):
                raise JsonSchemaError(loc, "expected [x, y, z]")
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row):
                raise JsonSchemaError(loc, "coordinates must be numbers")
            coords.append((float(row[0]), float(row[1]), float(row[2])))

    try:
        return make_molecule(atom_types, bonds, coords)
    except MoleculeError as exc:
        # Duplicate bonds survive per-entry checks; report them under $.bonds.
        raise JsonSchemaError(root + ".bonds", str(exc)) from None


def serialize_json(mol: Molecule) -> str:
    """Canonical JSON: sorted keys, bonds sorted by (i, j), floats at 6 decimals.

    Output is byte-deterministic; equal molecules serialize to identical
    bytes, and ``parse_json(serialize_json(m)) == m``.
    """
    parts = ["{"]
    atoms = ",".join(json.dumps(_CODE_TO_SYMBOL[c]) for c in mol.atom_types)
    parts.append(f'"atoms":[{atoms}]')
    bonds = ",".join(f"[{i},{j},{t}]" for i, j, t in sorted(mol.bonds))
    parts.append(f',"bonds":[{bonds}]')
    if mol.coords is not None:
        rows = ",".join(f"[{x:.6f},{y:.6f},{z:.6f}]" for x, y, z in mol.coords)
        parts.append(f',"coords":[{rows}]')
    parts.append("}")
    return "".join(parts)
