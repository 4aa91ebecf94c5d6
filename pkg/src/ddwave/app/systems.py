"""Registry of the small systems the package knows how to set up."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from ..errors import InvalidArgument
from ..grid3d import GridSpec
from ..potentials import HghParams, Nucleus, hgh_for, load_hgh_parameters

ELEMENTS = {"H": 1, "He": 2, "Li": 3}


@dataclass(frozen=True)
class Template:
    name: str
    elements: Tuple[str, ...]          # one entry per nucleus, placed at (0, 0, -d/2) and (0, 0, +d/2)
    n_electrons: int
    model: str
    default_d: Optional[float]
    atoms: Tuple[str, ...]             # reference atoms for the binding energy
    hgh_only: bool = False


TEMPLATES: Dict[str, Template] = {
    "H": Template("H", ("H",), 1, "single_electron", None, ()),
    "He": Template("He", ("He",), 2, "hf_closed_shell_2e", None, ()),
    "Li": Template("Li", ("Li",), 1, "single_electron", None, (), hgh_only=True),
    "H2+": Template("H2+", ("H", "H"), 1, "single_electron", 2.0, ("H",)),
    "H2": Template("H2", ("H", "H"), 2, "hf_closed_shell_2e", 1.4, ("H", "H")),
    "LiH": Template("LiH", ("Li", "H"), 2, "hf_closed_shell_2e", 3.0, ("Li", "H"), hgh_only=True),
}


@dataclass(frozen=True)
class SystemDef:
    name: str
    nuclei: Tuple[Nucleus, ...]
    n_electrons: int
    model: str
    grid: GridSpec
    pseudo: str
    d: Optional[float] = None
    atoms: Tuple[str, ...] = ()
    references: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        need = 1 if self.model == "single_electron" else 2
        if self.n_electrons != need:
            raise InvalidArgument(f"model {self.model} holds {need} electron(s), {self.name} has {self.n_electrons}")


def make_nucleus(element: str, position, pseudo: str,
                 params: Optional[Dict[str, HghParams]] = None) -> Nucleus:
    if element not in ELEMENTS:
        raise InvalidArgument(f"unknown element {element!r}")
    if pseudo == "hgh":
        return Nucleus(float(ELEMENTS[element]), position, "hgh", hgh_for(element, params))
    return Nucleus(float(ELEMENTS[element]), position, pseudo)


def positions(n: int, d: Optional[float]) -> List[Tuple[float, float, float]]:
    if n == 1:
        return [(0.0, 0.0, 0.0)]
    if d is None or not d > 0:
        raise InvalidArgument("a diatomic system needs a positive bond length d")
    return [(0.0, 0.0, -d / 2.0), (0.0, 0.0, d / 2.0)]


def make_system(name: str, grid: GridSpec, pseudo: str = "hgh", d: Optional[float] = None,
                model: Optional[str] = None, n_electrons: Optional[int] = None,
                params_path=None, references: Optional[Dict[str, float]] = None) -> SystemDef:
    """Build the :class:`SystemDef` for a registered system.

    Nuclei of diatomics sit at ``(0, 0, -d/2)`` and ``(0, 0, d/2)`` Bohr, the
    first element of the template at the negative end.
    """
    tpl = TEMPLATES.get(name)
    if tpl is None:
        raise InvalidArgument(f"unknown system {name!r}; known: {sorted(TEMPLATES)}")
    if tpl.hgh_only and pseudo != "hgh":
        raise InvalidArgument(f"{name} is only set up with the valence-only hgh pseudopotential")
    params = load_hgh_parameters(params_path) if (pseudo == "hgh" and params_path) else None
    if d is None:
        d = tpl.default_d
    pos = positions(len(tpl.elements), d)
    nuclei = tuple(make_nucleus(el, p, pseudo, params) for el, p in zip(tpl.elements, pos))
    return SystemDef(name, nuclei, tpl.n_electrons if n_electrons is None else n_electrons,
                     model or tpl.model, grid, pseudo, d if len(pos) > 1 else None, tpl.atoms,
                     dict(references or {}))


def atom_system(element: str, grid: GridSpec, pseudo: str, params_path=None) -> SystemDef:
    """One-electron reference atom (H, or Li with its valence-only pseudopotential)."""
    if element not in ("H", "Li"):
        raise InvalidArgument(f"no one-electron reference atom for {element!r}")
    return make_system(element, grid, pseudo, params_path=params_path, model="single_electron", n_electrons=1)
