"""Exact enumeration over discrete front-door structural causal models.

The graph is fixed: ``C -> X``, ``C -> Y``, ``X -> Z``, ``Z -> Y`` with the
confounder ``C`` unobserved. Every quantity is an exact sum over the joint
table, so comparisons between estimators differ only by float roundoff.

``intervene_truth`` uses the mechanisms directly (the mutilated graph), while
``front_door``, ``do_z`` and ``observational`` only ever look at the
observational joint over ``(X, Z, Y)``. ``backdoor`` additionally sees ``C``.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from izaber.log import log

from .checkpoint import atomic_write_text
from .errors import (
    ConditioningError,
    ConfigurationError,
    DomainError,
    InputError,
    ParseError,
    PositivityError,
    ValidationError,
)

TOLERANCE = 1e-12


@dataclass
class DiscreteDistribution:
    probabilities: np.ndarray

    def __post_init__(self) -> None:
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        p = self.probabilities
        if p.ndim != 1 or p.size == 0:
            raise ValidationError("distribution must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValidationError("distribution has negative or non-finite entries: {}".format(p.tolist()))
        if abs(p.sum() - 1.0) > TOLERANCE:
            raise ValidationError("distribution sums to {!r}".format(float(p.sum())))

    def __len__(self) -> int:
        return self.probabilities.size

    def __getitem__(self, outcome: int) -> float:
        return float(self.probabilities[outcome])

    def as_list(self) -> List[float]:
        return [float(v) for v in self.probabilities]

    def max_abs_diff(self, other: "DiscreteDistribution") -> float:
        return float(np.max(np.abs(self.probabilities - other.probabilities)))


def total_variation(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    return 0.5 * float(np.abs(p.probabilities - q.probabilities).sum())


def _check_rows(name: str, table: np.ndarray, parents: str) -> None:
    flat = table.reshape(-1, table.shape[-1])
    for i, row in enumerate(flat):
        index = np.unravel_index(i, table.shape[:-1]) if table.ndim > 1 else ()
        where = ", ".join("{}={}".format(v, int(k)) for v, k in zip(parents, index)) or "-"
        if np.any(row < 0) or not np.all(np.isfinite(row)):
            raise ValidationError("{} row [{}] has negative or non-finite entries".format(name, where))
        if abs(row.sum() - 1.0) > TOLERANCE:
            raise ValidationError("{} row [{}] sums to {!r}".format(name, where, float(row.sum())))


@dataclass
class FrontDoorScm:
    """CPTs ``P(C)``, ``P(X|C)`` ``[c, x]``, ``P(Z|X)`` ``[x, z]``, ``P(Y|Z,C)`` ``[z, c, y]``."""

    p_c: np.ndarray
    p_x_given_c: np.ndarray
    p_z_given_x: np.ndarray
    p_y_given_zc: np.ndarray

    def __post_init__(self) -> None:
        self.p_c = np.asarray(self.p_c, dtype=np.float64)
        self.p_x_given_c = np.asarray(self.p_x_given_c, dtype=np.float64)
        self.p_z_given_x = np.asarray(self.p_z_given_x, dtype=np.float64)
        self.p_y_given_zc = np.asarray(self.p_y_given_zc, dtype=np.float64)
        self.validate()

    @property
    def sizes(self) -> Tuple[int, int, int, int]:
        """``(|C|, |X|, |Z|, |Y|)``."""
        return (self.p_c.size, self.p_x_given_c.shape[1], self.p_z_given_x.shape[1],
                self.p_y_given_zc.shape[2])

    def validate(self) -> None:
        if self.p_c.ndim != 1 or self.p_x_given_c.ndim != 2 or self.p_z_given_x.ndim != 2 \
                or self.p_y_given_zc.ndim != 3:
            raise ValidationError("CPTs must be P(C)[c], P(X|C)[c,x], P(Z|X)[x,z], P(Y|Z,C)[z,c,y]")
        nc, nx, nz = self.p_c.size, self.p_x_given_c.shape[1], self.p_z_given_x.shape[1]
        if self.p_x_given_c.shape[0] != nc:
            raise ValidationError("P(X|C) has {} rows for |C|={}".format(self.p_x_given_c.shape[0], nc))
        if self.p_z_given_x.shape[0] != nx:
            raise ValidationError("P(Z|X) has {} rows for |X|={}".format(self.p_z_given_x.shape[0], nx))
        if self.p_y_given_zc.shape[:2] != (nz, nc):
            raise ValidationError("P(Y|Z,C) is indexed {} for |Z|={}, |C|={}".format(
                list(self.p_y_given_zc.shape[:2]), nz, nc))
        _check_rows("P(C)", self.p_c, "")
        _check_rows("P(X|C)", self.p_x_given_c, "C")
        _check_rows("P(Z|X)", self.p_z_given_x, "X")
        _check_rows("P(Y|Z,C)", self.p_y_given_zc, "ZC")


def joint(scm: FrontDoorScm) -> np.ndarray:
    """``P(c, x, z, y)``."""
    return np.einsum("c,cx,xz,zcy->cxzy", scm.p_c, scm.p_x_given_c, scm.p_z_given_x, scm.p_y_given_zc)


class _Observed:
    """Observational marginals over (X, Z, Y), the only inputs of the adjustments."""

    def __init__(self, scm: FrontDoorScm) -> None:
        full = joint(scm)
        self.xzy = full.sum(axis=0)
        self.xz = self.xzy.sum(axis=2)
        self.x = self.xz.sum(axis=1)


def _check_x(scm: FrontDoorScm, x: int) -> None:
    if not 0 <= x < scm.sizes[1]:
        raise InputError("x={} outside 0..{}".format(x, scm.sizes[1] - 1))


def observational(scm: FrontDoorScm, x: int) -> DiscreteDistribution:
    """``P(Y | X=x) = sum_z P(z|x) P(Y|z,x)`` by Bayes over the joint."""
    _check_x(scm, x)
    obs = _Observed(scm)
    if obs.x[x] == 0.0:
        raise ConditioningError("P(X={}) is zero".format(x))
    result = np.zeros(scm.sizes[3])
    for z in range(scm.sizes[2]):
        if obs.xz[x, z] > 0.0:
            result += (obs.xz[x, z] / obs.x[x]) * (obs.xzy[x, z] / obs.xz[x, z])
    return DiscreteDistribution(result)


def intervene_truth(scm: FrontDoorScm, x: int) -> DiscreteDistribution:
    """``P(Y | do(X=x))`` in the mutilated graph: ``sum_z P(z|x) sum_c P(c) P(Y|z,c)``."""
    _check_x(scm, x)
    return DiscreteDistribution(np.einsum("z,c,zcy->y", scm.p_z_given_x[x], scm.p_c, scm.p_y_given_zc))


def front_door(scm: FrontDoorScm, x: int) -> DiscreteDistribution:
    """``sum_z P(z|x) sum_x' P(x') P(Y|z,x')`` from observational quantities only."""
    _check_x(scm, x)
    obs = _Observed(scm)
    if obs.x[x] == 0.0:
        raise ConditioningError("P(X={}) is zero".format(x))
    result = np.zeros(scm.sizes[3])
    for z in range(scm.sizes[2]):
        weight = obs.xz[x, z] / obs.x[x]
        if weight == 0.0:
            continue
        result += weight * _cross_sample(obs, z)
    return DiscreteDistribution(result)


def _cross_sample(obs: _Observed, z: int) -> np.ndarray:
    """``sum_x' P(x') P(Y|z,x')``."""
    total = np.zeros(obs.xzy.shape[2])
    for xp in range(obs.x.size):
        if obs.x[xp] == 0.0:
            continue
        if obs.xz[xp, z] == 0.0:
            raise PositivityError("P(Y|Z,X) undefined", cell=(xp, z))
        total += obs.x[xp] * obs.xzy[xp, z] / obs.xz[xp, z]
    return total


def do_z(scm: FrontDoorScm, z: int) -> DiscreteDistribution:
    """``P(Y | do(Z=z)) = sum_x P(x) P(Y|x,z)``."""
    if not 0 <= z < scm.sizes[2]:
        raise InputError("z={} outside 0..{}".format(z, scm.sizes[2] - 1))
    return DiscreteDistribution(_cross_sample(_Observed(scm), z))


def backdoor(scm: FrontDoorScm, x: int) -> DiscreteDistribution:
    """``sum_c P(Y|x,c) P(c)``, possible only because the oracle can see ``C``."""
    _check_x(scm, x)
    full = joint(scm)
    cxy = full.sum(axis=2)
    cx = cxy.sum(axis=2)
    result = np.zeros(scm.sizes[3])
    for c in range(scm.sizes[0]):
        if scm.p_c[c] == 0.0:
            continue
        if cx[c, x] == 0.0:
            raise PositivityError("P(Y|X,C) undefined", cell=(x, c))
        result += scm.p_c[c] * cxy[c, x] / cx[c, x]
    return DiscreteDistribution(result)


def chained_front_door(scm: FrontDoorScm, x: int) -> DiscreteDistribution:
    """``sum_z P(z|x) P(Y|do(z))``: the two partial effects chained."""
    _check_x(scm, x)
    obs = _Observed(scm)
    if obs.x[x] == 0.0:
        raise ConditioningError("P(X={}) is zero".format(x))
    result = np.zeros(scm.sizes[3])
    for z in range(scm.sizes[2]):
        weight = obs.xz[x, z] / obs.x[x]
        if weight > 0.0:
            result += weight * do_z(scm, z).probabilities
    return DiscreteDistribution(result)


# Geometric means ---------------------------------------------------------------

def _distribution(values, name: str) -> np.ndarray:
    try:
        return DiscreteDistribution(values).probabilities
    except ValidationError as err:
        raise InputError("{}: {}".format(name, err))


def wgm(values: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted geometric mean ``prod y^P = exp(sum P ln y)``."""
    y = np.asarray(values, dtype=np.float64)
    w = _distribution(weights, "weights")
    if y.shape != w.shape:
        raise InputError("wgm: {} values for {} weights".format(y.size, w.size))
    if np.any(y <= 0):
        raise DomainError("wgm: values must be positive")
    return float(np.exp(np.dot(w, np.log(y))))


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max())
    return e / e.sum()


@dataclass
class AffineScorer:
    """``g(z, x) = z W_z + x W_x + b``."""

    w_z: np.ndarray
    w_x: np.ndarray
    b: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.w_z = np.asarray(self.w_z, dtype=np.float64)
        self.w_x = np.asarray(self.w_x, dtype=np.float64)
        if self.w_z.shape[1] != self.w_x.shape[1]:
            raise InputError("AffineScorer: W_z and W_x disagree on the number of outcomes")
        self.b = np.zeros(self.w_z.shape[1]) if self.b is None else np.asarray(self.b, dtype=np.float64)

    def __call__(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        return z @ self.w_z + x @ self.w_x + self.b


@dataclass
class NwgmGap:
    exact: DiscreteDistribution
    approx: DiscreteDistribution
    gap: float


def nwgm_gap(g: Callable[[np.ndarray, np.ndarray], np.ndarray], pz: Sequence[float], px: Sequence[float],
             z_embed: Sequence[Sequence[float]], x_embed: Sequence[Sequence[float]]) -> NwgmGap:
    """Exact ``E_z E_x softmax(g(z, x))`` against ``softmax(g(E[z], E[x]))``."""
    wz = _distribution(pz, "Pz")
    wx = _distribution(px, "Px")
    Z = np.asarray(z_embed, dtype=np.float64)
    X = np.asarray(x_embed, dtype=np.float64)
    if Z.shape[0] != wz.size or X.shape[0] != wx.size:
        raise InputError("nwgm_gap: embeddings do not match the distributions")
    exact = sum(wz[i] * wx[j] * _softmax(g(Z[i], X[j])) for i in range(wz.size) for j in range(wx.size))
    approx = _softmax(g(wz @ Z, wx @ X))
    exact_d, approx_d = DiscreteDistribution(exact), DiscreteDistribution(approx)
    return NwgmGap(exact_d, approx_d, exact_d.max_abs_diff(approx_d))


# Generators and catalog ------------------------------------------------------

def random_scm(sizes: Sequence[int], seed: int, floor: float = 1e-3) -> FrontDoorScm:
    """Seeded SCM with every CPT entry bounded below by a floor-derived margin."""
    nc, nx, nz, ny = (int(s) for s in sizes)
    if min(nc, nx, nz, ny) < 1:
        raise ConfigurationError("random_scm: domain sizes must be >= 1")
    if not 0.0 < floor < 1.0 / max(nc, nx, nz, ny):
        raise ConfigurationError("random_scm: floor must lie in (0, 1/size)")
    rng = np.random.default_rng(seed)

    def rows(count: int, width: int) -> np.ndarray:
        table = rng.dirichlet(np.ones(width), size=count)
        table = np.maximum(table, floor)
        return table / table.sum(axis=1, keepdims=True)

    return FrontDoorScm(
        p_c=rows(1, nc)[0],
        p_x_given_c=rows(nc, nx),
        p_z_given_x=rows(nx, nz),
        p_y_given_zc=rows(nz * nc, ny).reshape(nz, nc, ny),
    )


def confounded_binary() -> FrontDoorScm:
    """Strong confounding: C drives X and whether Y agrees with Z."""
    p_y = np.zeros((2, 2, 2))
    for z in range(2):
        for c in range(2):
            p_y[z, c] = [0.1, 0.9] if z == c else [0.9, 0.1]
    return FrontDoorScm(
        p_c=[0.5, 0.5],
        p_x_given_c=[[0.9, 0.1], [0.1, 0.9]],
        p_z_given_x=[[0.8, 0.2], [0.2, 0.8]],
        p_y_given_zc=p_y,
    )


def unconfounded_binary() -> FrontDoorScm:
    """Same mechanisms, but X ignores C."""
    scm = confounded_binary()
    return FrontDoorScm(scm.p_c, [[0.7, 0.3], [0.7, 0.3]], scm.p_z_given_x, scm.p_y_given_zc)


CATALOG: Dict[str, Callable[[], FrontDoorScm]] = {
    "confounded-binary": confounded_binary,
    "unconfounded-binary": unconfounded_binary,
}


class _ScmDumper(yaml.SafeDumper):
    pass


def _represent_probability(dumper: yaml.SafeDumper, value: float) -> yaml.ScalarNode:
    if not np.isfinite(value):
        return dumper.represent_float(value)
    text = "{:.17g}".format(value)
    # YAML 1.1 only reads a float back when the mantissa has a point
    if "." not in text:
        mantissa, _, exponent = text.partition("e")
        text = mantissa + ".0" + ("e" + exponent if exponent else "")
    return dumper.represent_scalar("tag:yaml.org,2002:float", text)


_ScmDumper.add_representer(float, _represent_probability)


def save_scm(scm: FrontDoorScm, path: str) -> None:
    """Write ``scm`` as YAML, probabilities at 17 significant digits."""
    nc, nx, nz, ny = scm.sizes
    doc = {
        "sizes": {"C": nc, "X": nx, "Z": nz, "Y": ny},
        "p_c": scm.p_c.tolist(),
        "p_x_given_c": scm.p_x_given_c.tolist(),
        "p_z_given_x": scm.p_z_given_x.tolist(),
        "p_y_given_zc": scm.p_y_given_zc.tolist(),
    }
    atomic_write_text(path, yaml.dump(doc, Dumper=_ScmDumper, sort_keys=False, default_flow_style=None))


def load_scm(path: str) -> FrontDoorScm:
    with open(path) as f:
        try:
            doc = yaml.safe_load(f)
        except yaml.YAMLError as err:
            line = getattr(getattr(err, "problem_mark", None), "line", None)
            raise ParseError("invalid YAML: {}".format(err), line=None if line is None else line + 1)
    if not isinstance(doc, dict):
        raise ParseError("SCM file must be a mapping")
    missing = [k for k in ("sizes", "p_c", "p_x_given_c", "p_z_given_x", "p_y_given_zc") if k not in doc]
    if missing:
        raise ParseError("SCM file is missing {}".format(", ".join(missing)))
    scm = FrontDoorScm(doc["p_c"], doc["p_x_given_c"], doc["p_z_given_x"], doc["p_y_given_zc"])
    sizes = doc["sizes"]
    declared = tuple(int(sizes[k]) for k in ("C", "X", "Z", "Y"))
    if declared != scm.sizes:
        raise ValidationError("declared sizes {} do not match CPT shapes {}".format(list(declared), list(scm.sizes)))
    return scm


# Reporting -------------------------------------------------------------------

@dataclass
class OracleReport:
    x: int
    observational: DiscreteDistribution
    intervene_truth: DiscreteDistribution
    front_door: DiscreteDistribution
    backdoor: DiscreteDistribution
    do_z: List[DiscreteDistribution] = field(default_factory=list)

    @property
    def max_deviation(self) -> float:
        """Largest pairwise gap among the three interventional estimates."""
        estimates = [self.intervene_truth, self.front_door, self.backdoor]
        return max(a.max_abs_diff(b) for a in estimates for b in estimates)

    @property
    def confounding_bias(self) -> float:
        return total_variation(self.observational, self.intervene_truth)

    def format(self) -> str:
        def row(label: str, dist: DiscreteDistribution) -> str:
            return "{:<18}".format(label) + " ".join("{:.17g}".format(v) for v in dist.as_list())

        lines = [
            row("observational", self.observational),
            row("front_door", self.front_door),
            row("backdoor", self.backdoor),
            row("intervene_truth", self.intervene_truth),
        ]
        lines += [row("do_z[{}]".format(z), d) for z, d in enumerate(self.do_z)]
        lines.append("{:<18}{:.3e}".format("max_deviation", self.max_deviation))
        lines.append("{:<18}{:.17g}".format("confounding_tv", self.confounding_bias))
        return "\n".join(lines)


def oracle_report(scm: FrontDoorScm, x: int) -> OracleReport:
    report = OracleReport(
        x=x,
        observational=observational(scm, x),
        intervene_truth=intervene_truth(scm, x),
        front_door=front_door(scm, x),
        backdoor=backdoor(scm, x),
        do_z=[do_z(scm, z) for z in range(scm.sizes[2])],
    )
    log.debug("oracle: x={} max deviation {:.3e}".format(x, report.max_deviation))
    return report
