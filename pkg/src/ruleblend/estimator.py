"""Fitting and using the weighted-node model.

The pipeline: roughly impute the training table, standardize the response
(regression only), mine the node ensemble from randomized trees, build the
membership and mean designs, reduce the equality-constrained weight problem
through the indicator's nullspace, solve the resulting QP, and recover the
node weights. A prediction for an observation is the weight-blended mean of
the nodes containing it, mapped back to response units.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
from scipy import sparse

from . import qp as qpmod
from .data import (IDENTITY_SCALER, NUMERIC, Dataset, FeatureSchema,
                   ResponseScaler, degenerate_columns, impute_rough,
                   standardize_response)
from .errors import DataError, SchemaError, SolverError
from .matrices import build_design
from .nodegen import (Interval, LevelSet, NodeRule, NodeSet, generate_node_set,
                      membership_matrix, node_membership)

FORMAT_VERSION = 1
SELECT_TOL = 1e-8

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class FitConfig:
    """Fitting parameters.

    ``q`` is the target ensemble size including the root. ``lam`` bounds the
    weight total (infinity disables the budget; 1 forces the root-only
    model). ``mtry`` and ``subsample_size`` default to ceil(p/3) and
    max(ceil(n/10), 2 min_node_size).
    """

    q: int = 1000
    max_interaction: int = 2
    min_node_size: int = 5
    mtry: int | None = None
    subsample_size: int | None = None
    lam: float = math.inf
    nu: float = qpmod.DEFAULT_NU
    root_floor: float = qpmod.DEFAULT_ROOT_FLOOR
    seed: int = 0
    task: str = REGRESSION

    def validate(self) -> None:
        if self.q < 1:
            raise DataError("q must be at least 1")
        if self.max_interaction < 1:
            raise DataError("max_interaction must be at least 1")
        if self.min_node_size < 2:
            raise DataError("min_node_size must be at least 2")
        if self.mtry is not None and self.mtry < 1:
            raise DataError("mtry must be at least 1")
        if self.subsample_size is not None and self.subsample_size < 2:
            raise DataError("subsample_size must be at least 2")
        if not self.lam >= 1:
            raise DataError("lambda must be at least 1")
        if self.nu <= 0:
            raise DataError("nu must be positive")
        if not 0 < self.root_floor < 1:
            raise DataError("root_floor must lie in (0, 1)")
        if self.seed < 0:
            raise DataError("seed must be nonnegative")
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise DataError(f"unknown task {self.task!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lam"] = None if math.isinf(self.lam) else self.lam
        return d

    @staticmethod
    def from_dict(d: dict) -> "FitConfig":
        d = dict(d)
        lam = d.get("lam")
        d["lam"] = math.inf if lam is None else float(lam)
        return FitConfig(**d)


@dataclass(eq=False)
class Explanation:
    """Per-node breakdown of one prediction, heaviest weight first."""

    rows: list[tuple[str, float, float, int]]
    prediction: float


@dataclass(eq=False)
class HarvestModel:
    """A fitted model: node rules, their weights, and the response scaler."""

    nodes: NodeSet
    weights: np.ndarray
    scaler: ResponseScaler
    config: FitConfig
    schema: FeatureSchema
    diagnostics: dict = field(default_factory=dict)

    # -- predictions ----------------------------------------------------

    def _row_arrays(self, obs: Mapping[str, object]) -> tuple[np.ndarray, np.ndarray]:
        values = np.empty((1, self.schema.p))
        missing = np.zeros((1, self.schema.p), dtype=bool)
        for k, feat in enumerate(self.schema.features):
            raw = obs.get(feat.name)
            if raw is None or (isinstance(raw, float) and math.isnan(raw)):
                missing[0, k] = True
                values[0, k] = math.nan if feat.kind == NUMERIC else -1.0
            elif feat.kind == NUMERIC:
                values[0, k] = float(raw)
            elif isinstance(raw, (int, np.integer)) and not isinstance(raw, bool):
                values[0, k] = float(raw)
            else:
                try:
                    values[0, k] = feat.levels.index(str(raw))
                except ValueError:
                    values[0, k] = -2.0
        return values, missing

    def _predict_internal(self, values: np.ndarray, missing: np.ndarray) -> np.ndarray:
        member = membership_matrix(self.nodes, values, missing).astype(float)
        means = np.array([nd.mean for nd in self.nodes.nodes])
        num = member @ (self.weights * means)
        den = member @ self.weights
        return num / den

    def predict_table(self, ds: Dataset) -> np.ndarray:
        """Predictions, in response units, for every row of a table."""
        if tuple(ds.schema.features) != tuple(self.schema.features):
            raise SchemaError("dataset schema does not match the model")
        raw = self._predict_internal(ds.values, ds.missing)
        return self.scaler.inverse(raw)

    def predict(self, obs: Mapping[str, object]) -> float:
        """Prediction for one observation given as a name -> value mapping.

        Missing values are None or NaN. The result is the weighted mean of
        the node means over the nodes containing the observation; an
        observation matching only the root gets the training grand mean.
        """
        values, missing = self._row_arrays(obs)
        return float(self.scaler.inverse(self._predict_internal(values, missing))[0])

    def predict_class(self, obs: Mapping[str, object],
                      threshold: float = 0.5) -> tuple[float, int]:
        """Class-1 probability and thresholded label for a classifier model."""
        if self.config.task != CLASSIFICATION:
            raise DataError("predict_class requires a classification model")
        prob = self.predict(obs)
        return prob, int(prob >= threshold)

    def predict_class_table(self, ds: Dataset,
                            threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
        if self.config.task != CLASSIFICATION:
            raise DataError("predict_class requires a classification model")
        probs = self.predict_table(ds)
        return probs, (probs >= threshold).astype(int)

    # -- inspection -----------------------------------------------------

    def selected_nodes(self, tol: float = SELECT_TOL) -> list[tuple[int, NodeRule, float]]:
        """(index, rule, weight) for nodes with weight above ``tol``, heaviest first."""
        picked = [(g, self.nodes.nodes[g], float(w))
                  for g, w in enumerate(self.weights) if w > tol]
        picked.sort(key=lambda t: -t[2])
        return picked

    def avg_sample_fraction(self) -> float:
        """Weighted average of node sample fractions, which equals 1 / ||w||_1.

        With I w = 1 the identity sum_g w_g n_g = n holds, so the
        weight-blended mean of n_g / n is exactly the reciprocal of the
        weight total.
        """
        return 1.0 / float(np.sum(self.weights))

    def rule_text(self, rule: NodeRule) -> str:
        if rule.is_root:
            return "root"
        parts = []
        for var, c in rule.constraints:
            feat = self.schema.features[var]
            if isinstance(c, Interval):
                if math.isinf(c.lo):
                    parts.append(f"{feat.name} < {c.hi:g}")
                elif math.isinf(c.hi):
                    parts.append(f"{feat.name} >= {c.lo:g}")
                else:
                    parts.append(f"{c.lo:g} <= {feat.name} < {c.hi:g}")
            else:
                names = sorted(feat.levels[i] for i in c.levels)
                parts.append(f"{feat.name} in {{{', '.join(names)}}}")
        return " & ".join(parts)

    def display_mean(self, rule: NodeRule) -> float:
        return float(self.scaler.inverse(rule.mean))

    def explain(self, obs: Mapping[str, object]) -> Explanation:
        """Positive-weight nodes containing the observation, heaviest first.

        The weight-blended mean of the listed node means reproduces the
        prediction; the root always appears since its weight is floored.
        """
        values, missing = self._row_arrays(obs)
        pred = float(self.scaler.inverse(self._predict_internal(values, missing))[0])
        rows = []
        for g, nd in enumerate(self.nodes.nodes):
            w = float(self.weights[g])
            if w > 0.0 and node_membership(nd, values[0], missing[0]):
                rows.append((self.rule_text(nd), w, self.display_mean(nd), nd.size))
        rows.sort(key=lambda r: -r[1])
        return Explanation(rows, pred)

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict:
        nodes = []
        for nd in self.nodes.nodes:
            cons = []
            for var, c in nd.constraints:
                if isinstance(c, Interval):
                    cons.append({"var": var, "type": "interval",
                                 "lo": None if math.isinf(c.lo) else c.lo,
                                 "hi": None if math.isinf(c.hi) else c.hi})
                else:
                    cons.append({"var": var, "type": "levels",
                                 "levels": sorted(c.levels)})
            nodes.append({"constraints": cons, "mean": nd.mean, "size": nd.size})
        return {
            "format_version": FORMAT_VERSION,
            "schema": self.schema.to_dict(),
            "config": self.config.to_dict(),
            "scaler": self.scaler.to_dict(),
            "nodes": nodes,
            "weights": [float(w) for w in self.weights],
            "diagnostics": self.diagnostics,
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @staticmethod
    def from_dict(payload: dict) -> "HarvestModel":
        version = payload.get("format_version")
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported model format version {version!r}")
        schema = FeatureSchema.from_dict(payload["schema"])
        config = FitConfig.from_dict(payload["config"])
        scaler = ResponseScaler.from_dict(payload["scaler"])
        rules = []
        for entry in payload["nodes"]:
            cons = []
            for c in entry["constraints"]:
                if c["type"] == "interval":
                    lo = -math.inf if c["lo"] is None else float(c["lo"])
                    hi = math.inf if c["hi"] is None else float(c["hi"])
                    cons.append((int(c["var"]), Interval(lo, hi)))
                elif c["type"] == "levels":
                    cons.append((int(c["var"]), LevelSet(frozenset(int(v) for v in c["levels"]))))
                else:
                    raise DataError(f"unknown constraint type {c['type']!r}")
            rules.append(NodeRule(tuple(cons), float(entry["mean"]), int(entry["size"]), None))
        weights = np.array([float(w) for w in payload["weights"]])
        model = HarvestModel(NodeSet(rules), weights, scaler, config, schema,
                             dict(payload.get("diagnostics", {})))
        model.validate()
        return model

    @staticmethod
    def load(path: str) -> "HarvestModel":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read model file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"model file {path} is not valid JSON: {exc}") from exc
        return HarvestModel.from_dict(payload)

    def validate(self) -> None:
        """Invariant checks run on load and after fitting."""
        rules = self.nodes.nodes
        if len(self.weights) != len(rules):
            raise DataError("weight vector length does not match node count")
        if not rules or not rules[0].is_root:
            raise DataError("model must carry the unconstrained root at index 0")
        if np.any(self.weights < 0):
            raise DataError("node weights must be nonnegative")
        if self.weights[0] < self.config.root_floor - 1e-9:
            raise DataError("root weight is below its floor")
        n = rules[0].size
        sizes = np.array([nd.size for nd in rules])
        budget = float(np.sum(self.weights * sizes))
        if abs(budget - n) > 1e-4:
            raise DataError(
                f"sum of weight * size is {budget:.6f}, expected {n} within 1e-4")
        if self.config.task == CLASSIFICATION:
            means = np.array([nd.mean for nd in rules])
            if means.min() < -1e-12 or means.max() > 1 + 1e-12:
                raise DataError("classification node means must lie in [0, 1]")


# ---- fitting ----------------------------------------------------------------


def fit(ds: Dataset, config: FitConfig | None = None,
        qp_capture: dict | None = None) -> HarvestModel:
    """Fit the model on a training table.

    Returns a model whose diagnostics record the ensemble size reached, the
    reduced dimension, solver status and KKT residuals, the training loss on
    the internal response scale, and the positive-weight node count. When a
    dict is passed as ``qp_capture`` it receives the assembled reduced
    problem and its solution under keys "problem" and "solution" (debugging
    hook used by the command line's --dump-qp).
    """
    config = config or FitConfig()
    config.validate()
    ds.check()
    if ds.response is None:
        raise DataError("fitting needs a response column")
    if ds.n < 2 * config.min_node_size:
        raise DataError("need at least 2 * min_node_size training rows")

    t0 = time.perf_counter()
    degenerate = degenerate_columns(ds)
    work = impute_rough(ds)
    # Imputed cells count as observed from here on; only prediction-time
    # missingness excludes an observation from a node.
    complete = np.zeros_like(work.missing)

    if config.task == CLASSIFICATION:
        uniq = np.unique(work.response)
        if not np.isin(uniq, (0.0, 1.0)).all():
            raise DataError("classification requires a 0/1 response")
        y_int = work.response.astype(float)
        scaler = IDENTITY_SCALER
    else:
        y_int, scaler = standardize_response(work.response)

    internal = Dataset(work.schema, work.values, complete, y_int)
    nodes = generate_node_set(
        internal, config.q, max_interaction=config.max_interaction,
        min_node_size=config.min_node_size, mtry=config.mtry,
        subsample_size=config.subsample_size, seed=config.seed)
    if config.task == REGRESSION:
        root = nodes.nodes[0]
        nodes.nodes[0] = NodeRule((), 0.0, root.size, root.members)

    design = build_design(nodes, internal)
    basis = qpmod.nullspace_basis(design.indicator)
    q_tilde = basis.shape[1]

    if q_tilde == 0:
        weights = np.zeros(nodes.q)
        weights[0] = 1.0
        solver_status = "trivial-nullspace"
        kkt = {"stationarity": 0.0, "feasibility": 0.0, "comp_slack": 0.0,
               "min_dual": 0.0}
        iterations = 0
    else:
        problem = qpmod.assemble_reduced(design, basis, y_int, nu=config.nu,
                                         lam=config.lam,
                                         root_floor=config.root_floor)
        solution = qpmod.solve_qp(problem)
        if qp_capture is not None:
            qp_capture["problem"] = problem
            qp_capture["solution"] = solution
        if solution.status != "converged":
            raise SolverError(
                f"weight optimization did not converge: status={solution.status} "
                f"residuals={solution.kkt}")
        weights = qpmod.recover_weights(solution.d, basis, config.root_floor)
        solver_status = solution.status
        kkt = solution.kkt
        iterations = solution.iterations

    fitted = design.node_mean @ weights
    loss = float(np.sum((y_int - fitted) ** 2))
    diagnostics = {
        "n": ds.n,
        "p": ds.p,
        "task": config.task,
        "trees_grown": nodes.meta.get("trees_grown"),
        "q_requested": config.q,
        "q_reached": nodes.q,
        "q_tilde": q_tilde,
        "solver_status": solver_status,
        "solver_iterations": iterations,
        "kkt": kkt,
        "training_loss": loss,
        "nonzero_weights": int(np.sum(weights > SELECT_TOL)),
        "degenerate_columns": degenerate,
        "fit_seconds": round(time.perf_counter() - t0, 6),
    }
    model = HarvestModel(nodes, weights, scaler, config, ds.schema, diagnostics)
    model.validate()
    return model


def fit_regularized(ds: Dataset, config: FitConfig) -> HarvestModel:
    """Fit with an explicit weight budget; lambda must be finite and >= 1."""
    if math.isinf(config.lam):
        raise DataError("fit_regularized expects a finite lambda")
    return fit(ds, config)


def smoothing_matrix(model: HarvestModel, train: Dataset) -> np.ndarray:
    """The linear smoother S with S_ij = sum_g w_g 1{i, j in node g} / n_g.

    ``train`` must be the table the model was fitted on; the same rough
    imputation is applied before memberships are recomputed (imputed cells
    count as observed, as during fitting), and the recomputed node sizes are
    checked against the stored ones. Fitted values on the internal response
    scale are S times the internal response.
    """
    work = impute_rough(train)
    member = membership_matrix(model.nodes, work.values,
                               np.zeros_like(work.missing))
    sizes = member.sum(axis=0)
    stored = np.array([nd.size for nd in model.nodes.nodes])
    if not np.array_equal(sizes, stored):
        raise SchemaError("dataset does not reproduce the model's node memberships")
    ind = sparse.csc_matrix(member.astype(float))
    scaled = ind @ sparse.diags(model.weights / stored)
    return np.asarray((scaled @ ind.T).todense())
