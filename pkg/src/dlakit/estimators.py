"""scikit-learn style wrappers around the core functions.

The functional API stays primary; these classes give ``fit`` / ``predict``
/ ``get_params`` for pipelines and parameter sweeps.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .beurling import beurling_report
from .bounds import EnvelopeSpec, PhiSpec, envelope, envelope_for_graph
from .dla import LaunchConfig, run_dla
from .graphs import Graph, parse_family
from .growth import GrowthRecord, envelope_ratio, fit_exponent
from .potential import SolverConfig, solve_escape


def _graph(g):
    return parse_family(g) if isinstance(g, str) else g


class DLASimulator(BaseEstimator):
    """Grow one aggregate; ``record_`` holds rad(A_t) for t = 0..particles."""

    def __init__(self, graph="z3", particles=1000, seed=0, launch_factor=2.0, launch_offset=5,
                 escape_factor=4.0, max_retries=1_000_000, step_cap=10**9, sampler="auto",
                 workers=1):
        self.graph = graph
        self.particles = particles
        self.seed = seed
        self.launch_factor = launch_factor
        self.launch_offset = launch_offset
        self.escape_factor = escape_factor
        self.max_retries = max_retries
        self.step_cap = step_cap
        self.sampler = sampler
        self.workers = workers

    def fit(self, X=None, y=None):
        g = _graph(self.graph)
        cfg = LaunchConfig(self.launch_factor, self.launch_offset, self.escape_factor,
                           self.max_retries, self.step_cap, self.sampler)
        self.aggregate_, radii = run_dla(g, self.particles, self.seed, cfg, self.workers)
        self.record_ = GrowthRecord.from_radii(radii, seed=self.seed, family=g.tag)
        return self

    def transform(self, X=None):
        check_is_fitted(self, "record_")
        return self.record_.rad.copy()


class GrowthExponentEstimator(BaseEstimator):
    """Power-law fit rad ~ c t^alpha on [t_min, t_max]."""

    def __init__(self, t_min=100, t_max=None, ratio=1.05):
        self.t_min = t_min
        self.t_max = t_max
        self.ratio = ratio

    def fit(self, record: GrowthRecord, y=None):
        t_max = int(record.t[-1]) if self.t_max is None else self.t_max
        self.alpha_, self.stderr_ = fit_exponent(record, self.t_min, t_max, self.ratio)
        ts = np.unique(np.geomspace(self.t_min, t_max, 40).astype(np.int64))
        rs = record.radius_at(ts).astype(float)
        self.log_prefactor_ = float(np.mean(np.log(rs) - self.alpha_ * np.log(ts)))
        return self

    def predict(self, t):
        check_is_fitted(self, "alpha_")
        return np.exp(self.log_prefactor_) * np.asarray(t, dtype=float) ** self.alpha_


class EnvelopeRatio(BaseEstimator):
    """sup and trend of rad(t) / f(t); ``envelope`` is a tag or an EnvelopeSpec."""

    def __init__(self, envelope=None, t_min=100, t_max=None):
        self.envelope = envelope
        self.t_min = t_min
        self.t_max = t_max

    def _env(self, record) -> EnvelopeSpec:
        if isinstance(self.envelope, EnvelopeSpec):
            return self.envelope
        if self.envelope:
            return envelope(self.envelope)
        return envelope_for_graph(parse_family(record.family))

    def fit(self, record: GrowthRecord, y=None):
        self.sup_ratio_, self.argmax_t_, self.trend_ = envelope_ratio(
            record, self._env(record), self.t_min, self.t_max)
        return self


class HarmonicMeasure(BaseEstimator):
    """Exact harmonic measure from infinity of a finite set."""

    def __init__(self, box_radius=8, refine_factor=1.5, rel_tol=1e-3, max_refinements=5,
                 center="set"):
        self.box_radius = box_radius
        self.refine_factor = refine_factor
        self.rel_tol = rel_tol
        self.max_refinements = max_refinements
        self.center = center

    def fit(self, graph: Graph, A, y=None):
        cfg = SolverConfig(self.box_radius, self.refine_factor, self.rel_tol,
                           self.max_refinements, self.center)
        self.result_ = solve_escape(_graph(graph), A, cfg)
        self.capacity_ = self.result_.capacity
        self.harmonic_ = dict(self.result_.harmonic)
        self.converged_ = self.result_.converged
        return self

    def predict(self, vertices):
        check_is_fitted(self, "harmonic_")
        return np.array([self.harmonic_.get(tuple(v), 0.0) for v in vertices])


class BeurlingEstimator(BaseEstimator):
    """Fitted Beurling constants over connected sets of size <= max_size."""

    def __init__(self, max_size=5, phi_volume=None, phi_radius=None, box_radius=None,
                 method="green"):
        self.max_size = max_size
        self.phi_volume = phi_volume
        self.phi_radius = phi_radius
        self.box_radius = box_radius
        self.method = method

    def fit(self, graph, y=None):
        pv = self.phi_volume or PhiSpec("volume_power", 1.0, 1 / 3)
        pr = self.phi_radius or PhiSpec("radius_power", 1.0, 1 / 3)
        self.report_ = beurling_report(_graph(graph), self.max_size, pv, pr,
                                       SolverConfig(center="root"), self.method, self.box_radius)
        self.fitted_C_volume_ = self.report_.fitted_C_volume
        self.fitted_C_radius_ = self.report_.fitted_C_radius
        return self
