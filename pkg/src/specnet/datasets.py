"""Spectrum data model, PID concentration conversion, and the synthetic corpus.

The experimental FTIR corpus is not redistributable, so desk-scale work runs
on a Beer-Lambert stand-in: per-class Lorentzian peak templates whose
absorbance scales linearly with concentration, plus a smooth baseline and
gaussian noise. The ingestion path (PID reading -> cell concentration,
re-gridding onto the 622-channel axis) stays available for real data.
"""

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

N_CHANNELS = 622
N_FOLDS = 5
GRID_MIN_CM1 = 700.0
GRID_MAX_CM1 = 1300.0

#: Volumes of the evaporation chamber and multipass cell, in liters.
DEFAULT_V1_L = 0.6
DEFAULT_V2_L = 2.0

PROVENANCES = ("experimental", "synthetic_corpus", "cvae_generated")


class DataFormatError(ValueError):
    """Malformed input file; message carries file, line and column."""


class VocClass(Enum):
    """The ten classification targets, alphabetical and frozen (index 1 is air)."""

    ACETONE = 0
    AIR = 1
    BENZENE = 2
    ETHANOL = 3
    ISOPROPANOL = 4
    M_XYLENE = 5
    O_XYLENE = 6
    P_XYLENE = 7
    STYRENE = 8
    TOLUENE = 9

    @property
    def index(self):
        return self.value

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def from_label(cls, label):
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown VOC class {label!r}") from None


CLASS_ORDER = tuple(VocClass)
CLASS_LABELS = tuple(c.label for c in CLASS_ORDER)
VOC_CLASSES = tuple(c for c in CLASS_ORDER if c is not VocClass.AIR)
#: Position of each VOC in the 9-slot concentration vector (air has no slot).
VOC_SLOT = {c: i for i, c in enumerate(VOC_CLASSES)}

#: PID conversion factors (styrene-referenced photo-ionization response).
CONVERSION_FACTORS = {
    VocClass.ACETONE: 2.75,
    VocClass.BENZENE: 1.325,
    VocClass.ETHANOL: 30.0,
    VocClass.ISOPROPANOL: 15.0,
    VocClass.M_XYLENE: 1.1,
    VocClass.O_XYLENE: 1.15,
    VocClass.P_XYLENE: 0.975,
    VocClass.STYRENE: 1.0,
    VocClass.TOLUENE: 1.25,
}


def conversion_factor(voc):
    """PID conversion factor for a VOC class; air has none."""
    if voc is VocClass.AIR:
        raise ValueError("air has no PID conversion factor")
    return CONVERSION_FACTORS[voc]


def cell_concentration(ppm_reading, cf, v1=DEFAULT_V1_L, v2=DEFAULT_V2_L):
    """Concentration (and its error) in the measurement cell after gas expansion.

    The PID reads ``ppm_reading`` in the evaporation chamber of volume ``v1``;
    opening the valve expands the gas into ``v1 + v2``.
    Returns (concentration_ppm, error_ppm).
    """
    if v1 <= 0 or v2 <= 0:
        raise ValueError(f"volumes must be positive, got v1={v1}, v2={v2}")
    if cf <= 0:
        raise ValueError(f"conversion factor must be positive, got {cf}")
    if ppm_reading < 0:
        raise ValueError(f"PID reading must be non-negative, got {ppm_reading}")
    dilution = cf * v1 / (v1 + v2)
    return ppm_reading * dilution, dilution


def channel_grid():
    """Uniform wavenumber axis: 622 channels spanning 700-1300 cm^-1 inclusive."""
    return np.linspace(GRID_MIN_CM1, GRID_MAX_CM1, N_CHANNELS)


@dataclass(eq=False)
class Spectrum:
    """One 622-channel absorbance vector with its class label and concentration."""

    absorbance: np.ndarray
    label: VocClass
    concentration: float
    provenance: str = "synthetic_corpus"

    def __post_init__(self):
        self.absorbance = np.asarray(self.absorbance, dtype=np.float64)
        if self.absorbance.shape != (N_CHANNELS,):
            raise ValueError(f"spectrum must have shape ({N_CHANNELS},), got {self.absorbance.shape}")
        if not np.all(np.isfinite(self.absorbance)) or np.any(self.absorbance < 0):
            raise ValueError("absorbance values must be finite and non-negative")
        if self.concentration < 0:
            raise ValueError(f"concentration must be non-negative, got {self.concentration}")
        if self.label is VocClass.AIR and self.concentration != 0:
            raise ValueError("air spectra must have zero concentration")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")


@dataclass(eq=False)
class Corpus:
    """A labeled spectrum collection with a stratified 5-fold assignment."""

    spectra: list
    folds: np.ndarray

    def __post_init__(self):
        self.folds = np.asarray(self.folds, dtype=np.int64)
        if len(self.folds) != len(self.spectra):
            raise ValueError(f"{len(self.folds)} fold labels for {len(self.spectra)} spectra")
        if len(self.spectra) and not np.all((self.folds >= 0) & (self.folds < N_FOLDS)):
            raise ValueError(f"fold indices must lie in 0..{N_FOLDS - 1}")

    def __len__(self):
        return len(self.spectra)


def kfold_split(corpus, fold):
    """(train, validation) views for one fold rotation; disjoint and exhaustive."""
    if not 0 <= fold < N_FOLDS:
        raise ValueError(f"fold must be in 0..{N_FOLDS - 1}, got {fold}")
    train = [s for s, f in zip(corpus.spectra, corpus.folds) if f != fold]
    val = [s for s, f in zip(corpus.spectra, corpus.folds) if f == fold]
    return train, val


def one_hot(voc):
    """10-way one-hot class encoding."""
    v = np.zeros(len(CLASS_ORDER))
    v[voc.index] = 1.0
    return v


def regression_target(voc, concentration):
    """9-slot concentration vector: the VOC's slot holds the concentration, air is all-zero."""
    if concentration < 0:
        raise ValueError(f"concentration must be non-negative, got {concentration}")
    t = np.zeros(len(VOC_CLASSES))
    if voc is not VocClass.AIR:
        t[VOC_SLOT[voc]] = concentration
    elif concentration != 0:
        raise ValueError("air has no regression slot; concentration must be zero")
    return t


# -- Beer-Lambert stand-in corpus ---------------------------------------------


class Peak(NamedTuple):
    center_cm1: float
    width_cm1: float
    strength_per_ppm: float


@dataclass(eq=False)
class PeakTemplate:
    """Per-class Lorentzian absorption peaks plus baseline and noise levels.

    Widths are half-widths at half maximum; each Lorentzian is normalized to
    unit peak height so ``strength_per_ppm`` reads directly as absorbance/ppm.
    """

    peaks: dict
    baseline_amplitude: float
    noise_sigma: float

    def __post_init__(self):
        for voc in VOC_CLASSES:
            if len(self.peaks.get(voc, ())) < 2:
                raise ValueError(f"{voc.label} needs at least 2 template peaks")
        for voc, peaks in self.peaks.items():
            for p in peaks:
                if not (GRID_MIN_CM1 <= p.center_cm1 <= GRID_MAX_CM1) or p.width_cm1 <= 0 or p.strength_per_ppm <= 0:
                    raise ValueError(f"invalid peak {p} for {voc.label}")
        if self._overlapping_pairs() < 2:
            raise ValueError("template must contain at least two class pairs with overlapping peak centers")

    def _overlapping_pairs(self):
        pairs = 0
        classes = list(self.peaks)
        for i, a in enumerate(classes):
            for b in classes[i + 1 :]:
                if any(
                    abs(pa.center_cm1 - pb.center_cm1) <= 0.5 * min(pa.width_cm1, pb.width_cm1)
                    for pa in self.peaks[a]
                    for pb in self.peaks[b]
                ):
                    pairs += 1
        return pairs


def default_template():
    """Stand-in peak set: loosely realistic fingerprint-region bands per VOC.

    The xylene isomers share a weak band near 1040-1052 cm^-1 and differ mostly
    in their strong low-frequency peak, reproducing the overlap that makes the
    real spectra hard to separate.
    """
    peaks = {
        VocClass.ACETONE: (Peak(1216, 12, 0.016), Peak(1090, 10, 0.007), Peak(902, 9, 0.004)),
        VocClass.AIR: (),
        VocClass.BENZENE: (Peak(1038, 10, 0.014), Peak(1150, 14, 0.005)),
        VocClass.ETHANOL: (Peak(1066, 12, 0.012), Peak(1028, 10, 0.009), Peak(880, 11, 0.006)),
        VocClass.ISOPROPANOL: (Peak(950, 10, 0.013), Peak(1130, 12, 0.008), Peak(820, 9, 0.005)),
        VocClass.M_XYLENE: (Peak(768, 10, 0.015), Peak(1040, 11, 0.006), Peak(880, 10, 0.004)),
        VocClass.O_XYLENE: (Peak(742, 10, 0.015), Peak(1052, 11, 0.006), Peak(985, 9, 0.003)),
        VocClass.P_XYLENE: (Peak(795, 10, 0.015), Peak(1040, 11, 0.006), Peak(1020, 9, 0.003)),
        VocClass.STYRENE: (Peak(908, 10, 0.014), Peak(990, 9, 0.010), Peak(776, 10, 0.006)),
        VocClass.TOLUENE: (Peak(728, 10, 0.016), Peak(1028, 10, 0.007), Peak(1080, 10, 0.004)),
    }
    return PeakTemplate(peaks=peaks, baseline_amplitude=0.02, noise_sigma=0.004)


def class_signature(template, voc, grid=None):
    """Unit-concentration absorbance profile of a class (sum of its Lorentzians)."""
    grid = channel_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    sig = np.zeros_like(grid)
    for p in template.peaks.get(voc, ()):
        sig += p.strength_per_ppm * p.width_cm1**2 / ((grid - p.center_cm1) ** 2 + p.width_cm1**2)
    return sig


def baseline_profile(template, grid=None):
    """Smooth instrument background: a gentle ramp across the band."""
    if grid is None:
        grid = channel_grid()
    rel = (grid - GRID_MIN_CM1) / (GRID_MAX_CM1 - GRID_MIN_CM1)
    return template.baseline_amplitude * (0.5 + 0.5 * rel)


def peak_support(template, voc, grid=None):
    """Channel indices within one half-width of any template peak of the class."""
    if grid is None:
        grid = channel_grid()
    mask = np.zeros(len(grid), dtype=bool)
    for p in template.peaks.get(voc, ()):
        mask |= np.abs(grid - p.center_cm1) <= p.width_cm1
    return np.flatnonzero(mask)


def synth_spectrum(template, voc, concentration, rng=None):
    """Draw one synthetic spectrum: concentration * signature + baseline + noise.

    Noise requires ``rng``; pass None for a noise-free spectrum regardless of
    the template's sigma. Absorbance is clipped at zero from below.
    """
    if concentration < 0:
        raise ValueError(f"concentration must be non-negative, got {concentration}")
    if voc is VocClass.AIR and concentration != 0:
        raise ValueError("air spectra must have zero concentration")
    grid = channel_grid()
    a = concentration * class_signature(template, voc, grid) + baseline_profile(template, grid)
    if rng is not None and template.noise_sigma > 0:
        a = a + rng.normal(0.0, template.noise_sigma, size=len(grid))
    return Spectrum(np.clip(a, 0.0, None), voc, float(concentration), provenance="synthetic_corpus")


@dataclass(eq=False)
class CorpusRecipe:
    """Deterministic corpus construction plan: counts, concentration ranges, seed."""

    counts: dict
    concentration_ranges: dict
    seed: int
    template: PeakTemplate = field(default_factory=default_template)

    def total(self):
        return sum(self.counts.values())


DEFAULT_CONC_RANGE_PPM = (5.0, 80.0)


def balanced_recipe(seed, per_class=100, conc_range=DEFAULT_CONC_RANGE_PPM, template=None):
    """Equal counts for all ten classes."""
    counts = {c: per_class for c in CLASS_ORDER}
    ranges = {c: ((0.0, 0.0) if c is VocClass.AIR else conc_range) for c in CLASS_ORDER}
    return CorpusRecipe(counts, ranges, seed, template or default_template())


def starved_recipe(seed, per_class=150, starved_count=3, conc_range=DEFAULT_CONC_RANGE_PPM, template=None):
    """Imbalance pattern with under-represented o-/p-xylene (<= 2% of the largest class)."""
    if starved_count > 0.02 * per_class:
        raise ValueError(f"starved count {starved_count} exceeds 2% of the largest class ({per_class})")
    recipe = balanced_recipe(seed, per_class, conc_range, template)
    recipe.counts[VocClass.O_XYLENE] = starved_count
    recipe.counts[VocClass.P_XYLENE] = starved_count
    return recipe


# Salt separating the fold-assignment RNG stream from per-spectrum streams.
_FOLD_STREAM = 1_000_003


def build_corpus(recipe):
    """Materialize a recipe into a corpus with a stratified 5-fold assignment.

    Each spectrum draws from its own RNG stream (master seed, spectrum index),
    so construction is order-independent and parallelizable.
    """
    if recipe.total() == 0:
        raise ValueError("corpus recipe is empty (all counts are zero)")
    spectra = []
    class_members = {c: [] for c in CLASS_ORDER}
    ordinal = 0
    for voc in CLASS_ORDER:
        lo, hi = recipe.concentration_ranges.get(voc, (0.0, 0.0))
        for _ in range(recipe.counts.get(voc, 0)):
            rng = np.random.default_rng((recipe.seed, ordinal))
            conc = 0.0 if voc is VocClass.AIR else float(rng.uniform(lo, hi))
            spectra.append(synth_spectrum(recipe.template, voc, conc, rng))
            class_members[voc].append(ordinal)
            ordinal += 1
    folds = np.zeros(len(spectra), dtype=np.int64)
    for voc in CLASS_ORDER:
        members = np.asarray(class_members[voc], dtype=np.int64)
        if len(members) == 0:
            continue
        rng = np.random.default_rng((recipe.seed, _FOLD_STREAM, voc.index))
        rng.shuffle(members)
        folds[members] = np.arange(len(members)) % N_FOLDS
    return Corpus(spectra, folds)


def to_arrays(spectra):
    """Stack spectra into (X, class_indices, concentrations) arrays."""
    x = np.stack([s.absorbance for s in spectra])
    labels = np.array([s.label.index for s in spectra], dtype=np.int64)
    conc = np.array([s.concentration for s in spectra])
    return x, labels, conc


# -- file formats --------------------------------------------------------------

SPECTRA_FORMAT_VERSION = 1
TEMPLATE_FORMAT_VERSION = 1


def write_spectra_csv(path, spectra, include_provenance=False):
    """Spectra CSV: '# format_version' comment, header row, one spectrum per row."""
    cols = ["class", "concentration_ppm"]
    if include_provenance:
        cols.append("provenance")
    cols += [f"a{i}" for i in range(N_CHANNELS)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# format_version={SPECTRA_FORMAT_VERSION}\n")
        fh.write(",".join(cols) + "\n")
        for s in spectra:
            row = [s.label.label, repr(float(s.concentration))]
            if include_provenance:
                row.append(s.provenance)
            row += [repr(float(v)) for v in s.absorbance]
            fh.write(",".join(row) + "\n")


def _format_error(path, line, column, message):
    return DataFormatError(f"{path}:{line}:{column}: {message}")


def read_spectra_csv(path):
    """Parse a spectra CSV, validating every row against the Spectrum invariants."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        line_no = 1
        if not first.startswith("#"):
            raise _format_error(path, 1, 1, "missing '# format_version' comment line")
        if f"format_version={SPECTRA_FORMAT_VERSION}" not in first:
            raise _format_error(path, 1, 1, f"unsupported format version in {first.strip()!r}")
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise _format_error(path, 2, 1, "missing header row") from None
        line_no += 1
        has_provenance = len(header) > 2 and header[2] == "provenance"
        n_meta = 3 if has_provenance else 2
        expected = ["class", "concentration_ppm"] + (["provenance"] if has_provenance else [])
        expected += [f"a{i}" for i in range(N_CHANNELS)]
        if header != expected:
            raise _format_error(path, 2, 1, f"unexpected header ({len(header)} columns, want {len(expected)})")
        spectra = []
        for row in reader:
            line_no += 1
            if len(row) != n_meta + N_CHANNELS:
                raise _format_error(path, line_no, 1, f"expected {n_meta + N_CHANNELS} fields, got {len(row)}")
            try:
                label = VocClass.from_label(row[0])
            except ValueError as e:
                raise _format_error(path, line_no, 1, str(e)) from None
            try:
                conc = float(row[1])
            except ValueError:
                raise _format_error(path, line_no, 2, f"bad concentration {row[1]!r}") from None
            provenance = row[2] if has_provenance else "experimental"
            values = np.empty(N_CHANNELS)
            for i, tok in enumerate(row[n_meta:]):
                try:
                    values[i] = float(tok)
                except ValueError:
                    raise _format_error(path, line_no, n_meta + i + 1, f"bad absorbance {tok!r}") from None
            try:
                spectra.append(Spectrum(values, label, conc, provenance))
            except ValueError as e:
                raise _format_error(path, line_no, 1, str(e)) from None
    return spectra


def save_template_json(path, template):
    doc = {
        "format_version": TEMPLATE_FORMAT_VERSION,
        "baseline_amplitude": template.baseline_amplitude,
        "noise_sigma": template.noise_sigma,
        "peaks": {
            voc.label: [[p.center_cm1, p.width_cm1, p.strength_per_ppm] for p in peaks]
            for voc, peaks in template.peaks.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_template_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise _format_error(path, e.lineno, e.colno, e.msg) from None
    if doc.get("format_version") != TEMPLATE_FORMAT_VERSION:
        raise _format_error(path, 1, 1, f"unsupported template format version {doc.get('format_version')!r}")
    try:
        peaks = {
            VocClass.from_label(label): tuple(Peak(*[float(x) for x in p]) for p in entries)
            for label, entries in doc["peaks"].items()
        }
        return PeakTemplate(
            peaks=peaks,
            baseline_amplitude=float(doc["baseline_amplitude"]),
            noise_sigma=float(doc["noise_sigma"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise _format_error(path, 1, 1, f"invalid template: {e}") from None


def recipe_to_json(recipe):
    return {
        "format_version": 1,
        "seed": recipe.seed,
        "counts": {c.label: recipe.counts.get(c, 0) for c in CLASS_ORDER},
        "concentration_ranges": {
            c.label: list(recipe.concentration_ranges.get(c, (0.0, 0.0))) for c in CLASS_ORDER
        },
        "template": {
            "baseline_amplitude": recipe.template.baseline_amplitude,
            "noise_sigma": recipe.template.noise_sigma,
            "peaks": {
                voc.label: [[p.center_cm1, p.width_cm1, p.strength_per_ppm] for p in peaks]
                for voc, peaks in recipe.template.peaks.items()
            },
        },
    }
