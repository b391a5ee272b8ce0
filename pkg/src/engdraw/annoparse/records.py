"""Structured annotation records and their JSON payload form."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Union

from engdraw.taxonomy import AnnotationClass


class GdtCharacteristic(str, Enum):
    STRAIGHTNESS = "straightness"
    FLATNESS = "flatness"
    CIRCULARITY = "circularity"
    CYLINDRICITY = "cylindricity"
    PROFILE_OF_LINE = "profile_of_line"
    PROFILE_OF_SURFACE = "profile_of_surface"
    ANGULARITY = "angularity"
    PERPENDICULARITY = "perpendicularity"
    PARALLELISM = "parallelism"
    POSITION = "position"
    CONCENTRICITY = "concentricity"
    SYMMETRY = "symmetry"
    CIRCULAR_RUNOUT = "circular_runout"
    TOTAL_RUNOUT = "total_runout"

    @property
    def symbol(self) -> str:
        return CHARACTERISTIC_SYMBOLS[self]

    @property
    def is_form(self) -> bool:
        return self in FORM_CHARACTERISTICS


CHARACTERISTIC_SYMBOLS: dict[GdtCharacteristic, str] = {
    GdtCharacteristic.STRAIGHTNESS: "⏤",
    GdtCharacteristic.FLATNESS: "⏥",
    GdtCharacteristic.CIRCULARITY: "○",
    GdtCharacteristic.CYLINDRICITY: "⌭",
    GdtCharacteristic.PROFILE_OF_LINE: "⌒",
    GdtCharacteristic.PROFILE_OF_SURFACE: "⌓",
    GdtCharacteristic.ANGULARITY: "∠",
    GdtCharacteristic.PERPENDICULARITY: "⊥",
    GdtCharacteristic.PARALLELISM: "∥",
    GdtCharacteristic.POSITION: "⌖",
    GdtCharacteristic.CONCENTRICITY: "◎",
    GdtCharacteristic.SYMMETRY: "⌯",
    GdtCharacteristic.CIRCULAR_RUNOUT: "↗",
    GdtCharacteristic.TOTAL_RUNOUT: "⌰",
}
SYMBOL_TO_CHARACTERISTIC = {sym: ch for ch, sym in CHARACTERISTIC_SYMBOLS.items()}

FORM_CHARACTERISTICS = frozenset(
    {
        GdtCharacteristic.STRAIGHTNESS,
        GdtCharacteristic.FLATNESS,
        GdtCharacteristic.CIRCULARITY,
        GdtCharacteristic.CYLINDRICITY,
    }
)


class MaterialModifier(str, Enum):
    MMC = "M"
    LMC = "L"
    RFS = "S"

    @property
    def symbol(self) -> str:
        return {"M": "Ⓜ", "L": "Ⓛ", "S": "Ⓢ"}[self.value]


DATUM_LETTERS = frozenset("ABCDEFGHJKLMNPRSTUVWXYZ")


@dataclass(frozen=True)
class DatumRef:
    label: str
    modifier: MaterialModifier | None = None

    def __post_init__(self) -> None:
        parts = self.label.split("-")
        if len(parts) > 2 or not all(len(p) == 1 and p in DATUM_LETTERS for p in parts):
            raise ValueError(f"invalid datum label {self.label!r}")


@dataclass(frozen=True)
class GdtFrame:
    characteristic: GdtCharacteristic
    tolerance: float
    diametral: bool = False
    spherical: bool = False
    material_modifier: MaterialModifier | None = None
    datums: tuple[DatumRef, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tolerance", float(self.tolerance))
        object.__setattr__(self, "datums", tuple(self.datums))
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.spherical and not self.diametral:
            raise ValueError("spherical zone must also be diametral")
        if len(self.datums) > 3:
            raise ValueError("at most 3 datum references")
        if self.characteristic.is_form and self.datums:
            raise ValueError(f"{self.characteristic.value} is a form tolerance and takes no datums")


class MeasureKind(str, Enum):
    LINEAR = "linear"
    DIAMETER = "diameter"
    SPHERICAL_DIAMETER = "spherical_diameter"
    RADIUS = "radius"
    SPHERICAL_RADIUS = "spherical_radius"
    SQUARE = "square"
    THREAD_METRIC = "thread_metric"
    ANGULAR = "angular"
    CHAMFER = "chamfer"


@dataclass(frozen=True)
class SymmetricTolerance:
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", float(self.value))
        if not self.value > 0:
            raise ValueError("symmetric tolerance must be positive")


@dataclass(frozen=True)
class AsymmetricTolerance:
    upper: float
    lower: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "upper", float(self.upper) + 0.0)
        object.__setattr__(self, "lower", float(self.lower) + 0.0)
        if self.upper < self.lower:
            raise ValueError("upper deviation below lower deviation")


@dataclass(frozen=True)
class FitClass:
    code: str


Tolerance = Union[SymmetricTolerance, AsymmetricTolerance, FitClass]

QUALIFIER_SYMBOLS = {"⌴": "counterbore", "⌵": "countersink", "↧": "depth"}


@dataclass(frozen=True)
class MeasureSpec:
    kind: MeasureKind
    nominal: float
    count: int | None = None
    tolerance: Tolerance | None = None
    thread_pitch: float | None = None
    chamfer_angle: float | None = None
    reference: bool = False
    qualifier: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "nominal", float(self.nominal))
        if not self.nominal > 0:
            raise ValueError("nominal must be positive")
        if self.count is not None and self.count < 1:
            raise ValueError("count must be a positive integer")
        if self.thread_pitch is not None:
            if self.kind is not MeasureKind.THREAD_METRIC:
                raise ValueError("thread pitch only applies to metric threads")
            if not self.thread_pitch > 0:
                raise ValueError("thread pitch must be positive")
            object.__setattr__(self, "thread_pitch", float(self.thread_pitch))
        if (self.chamfer_angle is not None) != (self.kind is MeasureKind.CHAMFER):
            raise ValueError("chamfer angle is required for, and only for, chamfers")
        if self.chamfer_angle is not None:
            if not 0 < self.chamfer_angle < 90:
                raise ValueError("chamfer angle must lie in (0, 90) degrees")
            object.__setattr__(self, "chamfer_angle", float(self.chamfer_angle))
        if self.qualifier is not None and self.qualifier not in QUALIFIER_SYMBOLS:
            raise ValueError(f"unknown qualifier {self.qualifier!r}")


class RoughnessParameter(str, Enum):
    RA = "Ra"
    RZ = "Rz"
    RQ = "Rq"
    RT = "Rt"


class SurfaceProcess(str, Enum):
    ANY = "any"
    MATERIAL_REMOVAL_REQUIRED = "material_removal_required"
    MATERIAL_REMOVAL_PROHIBITED = "material_removal_prohibited"

    @property
    def code(self) -> str:
        return PROCESS_CODES[self]


PROCESS_CODES = {
    SurfaceProcess.ANY: "APA",
    SurfaceProcess.MATERIAL_REMOVAL_REQUIRED: "MRR",
    SurfaceProcess.MATERIAL_REMOVAL_PROHIBITED: "NMR",
}


@dataclass(frozen=True)
class RoughnessSpec:
    parameter: RoughnessParameter
    value: float
    process: SurfaceProcess | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", float(self.value))
        if not self.value > 0:
            raise ValueError("roughness value must be positive")


ParsedAnnotation = Union[GdtFrame, MeasureSpec, RoughnessSpec]


def annotation_class_of(parsed: ParsedAnnotation) -> AnnotationClass:
    if isinstance(parsed, GdtFrame):
        return AnnotationClass.GDT
    if isinstance(parsed, MeasureSpec):
        return AnnotationClass.MEASURE
    if isinstance(parsed, RoughnessSpec):
        return AnnotationClass.ROUGHNESS
    raise TypeError(f"not a parsed annotation: {parsed!r}")


# --- JSON payloads ----------------------------------------------------------


def _enum_value(e: Enum | None) -> Any:
    return None if e is None else e.value


def _tolerance_to_dict(tol: Tolerance | None) -> dict[str, Any]:
    if tol is None:
        return {"type": "none"}
    if isinstance(tol, SymmetricTolerance):
        return {"type": "symmetric", "value": tol.value}
    if isinstance(tol, AsymmetricTolerance):
        return {"type": "asymmetric", "upper": tol.upper, "lower": tol.lower}
    return {"type": "fit_class", "code": tol.code}


def _tolerance_from_dict(d: dict[str, Any]) -> Tolerance | None:
    kind = d["type"]
    if kind == "none":
        return None
    if kind == "symmetric":
        return SymmetricTolerance(d["value"])
    if kind == "asymmetric":
        return AsymmetricTolerance(d["upper"], d["lower"])
    if kind == "fit_class":
        return FitClass(d["code"])
    raise ValueError(f"unknown tolerance type {kind!r}")


def to_dict(parsed: ParsedAnnotation) -> dict[str, Any]:
    if isinstance(parsed, GdtFrame):
        return {
            "type": "gdt",
            "characteristic": parsed.characteristic.value,
            "tolerance": parsed.tolerance,
            "diametral": parsed.diametral,
            "spherical": parsed.spherical,
            "material_modifier": _enum_value(parsed.material_modifier),
            "datums": [{"label": d.label, "modifier": _enum_value(d.modifier)} for d in parsed.datums],
        }
    if isinstance(parsed, MeasureSpec):
        return {
            "type": "measure",
            "kind": parsed.kind.value,
            "nominal": parsed.nominal,
            "count": parsed.count,
            "tolerance": _tolerance_to_dict(parsed.tolerance),
            "thread_pitch": parsed.thread_pitch,
            "chamfer_angle": parsed.chamfer_angle,
            "reference": parsed.reference,
            "qualifier": parsed.qualifier,
        }
    if isinstance(parsed, RoughnessSpec):
        return {
            "type": "roughness",
            "parameter": parsed.parameter.value,
            "value": parsed.value,
            "process": _enum_value(parsed.process),
        }
    raise TypeError(f"not a parsed annotation: {parsed!r}")


def _opt(enum_cls, value):
    return None if value is None else enum_cls(value)


def from_dict(d: dict[str, Any]) -> ParsedAnnotation:
    kind = d.get("type")
    if kind == "gdt":
        return GdtFrame(
            characteristic=GdtCharacteristic(d["characteristic"]),
            tolerance=d["tolerance"],
            diametral=bool(d["diametral"]),
            spherical=bool(d["spherical"]),
            material_modifier=_opt(MaterialModifier, d["material_modifier"]),
            datums=tuple(DatumRef(x["label"], _opt(MaterialModifier, x["modifier"])) for x in d["datums"]),
        )
    if kind == "measure":
        return MeasureSpec(
            kind=MeasureKind(d["kind"]),
            nominal=d["nominal"],
            count=d["count"],
            tolerance=_tolerance_from_dict(d["tolerance"]),
            thread_pitch=d["thread_pitch"],
            chamfer_angle=d["chamfer_angle"],
            reference=bool(d["reference"]),
            qualifier=d["qualifier"],
        )
    if kind == "roughness":
        return RoughnessSpec(
            parameter=RoughnessParameter(d["parameter"]),
            value=d["value"],
            process=_opt(SurfaceProcess, d["process"]),
        )
    raise ValueError(f"unknown parsed annotation type {kind!r}")
