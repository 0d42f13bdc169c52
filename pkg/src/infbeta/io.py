"""Model configuration, CSV ingestion, model files and table output.

Model files are canonical JSON: keys sorted, floats written with Python's
shortest round-trip repr, NaN stored as null. Saving, loading and saving
again therefore gives identical bytes.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import CollinearityError, ConfigError, DataError, DomainError, SchemaVersionError
from .links import LinkKind
from .regression import (ComponentFit, Dataset, FittedModel, ModelSpec, ParameterVector)

SCHEMA = "infbeta-model/1"
COMPONENTS = ("alpha", "mu", "phi")


@dataclass(frozen=True)
class TermSpec:
    link: LinkKind
    terms: tuple = ()
    intercept: bool = True

    def columns(self):
        return (("(Intercept)",) if self.intercept else ()) + self.terms

    def to_dict(self):
        return {"link": self.link.value, "terms": list(self.terms), "intercept": self.intercept}


@dataclass(frozen=True)
class ModelConfig:
    c: int
    alpha: TermSpec
    mu: TermSpec
    phi: TermSpec
    response: str = "y"
    confidence: float = 0.95
    seed: int = 0

    @classmethod
    def from_dict(cls, raw) -> "ModelConfig":
        if not isinstance(raw, dict):
            raise ConfigError("model config must be a JSON object")
        known = {"c", "alpha", "mu", "phi", "response", "confidence", "seed"}
        extra = sorted(set(raw) - known)
        if extra:
            raise ConfigError(f"unknown config field(s): {', '.join(extra)}")
        c = raw.get("c", 0)
        if c not in (0, 1):
            raise ConfigError("c must be 0 or 1")
        parts = {}
        defaults = {"alpha": "logit", "mu": "logit", "phi": "log"}
        for name in COMPONENTS:
            part = raw.get(name, {})
            if not isinstance(part, dict):
                raise ConfigError(f"{name} must be an object with link/terms/intercept")
            bad = sorted(set(part) - {"link", "terms", "intercept"})
            if bad:
                raise ConfigError(f"unknown field(s) in {name}: {', '.join(bad)}")
            try:
                link = LinkKind.parse(part.get("link", defaults[name]))
            except DomainError as exc:
                raise ConfigError(f"{name}: {exc}") from None
            if link.unit_domain != (name != "phi"):
                raise ConfigError(f"{name}: link {link.value} has the wrong domain")
            terms = part.get("terms", [])
            if not isinstance(terms, list) or not all(isinstance(t, str) for t in terms):
                raise ConfigError(f"{name}.terms must be a list of column names")
            if len(set(terms)) != len(terms):
                raise ConfigError(f"{name}.terms has duplicates")
            intercept = part.get("intercept", True)
            if not isinstance(intercept, bool):
                raise ConfigError(f"{name}.intercept must be true or false")
            if not intercept and not terms:
                raise ConfigError(f"{name} has no columns")
            parts[name] = TermSpec(link, tuple(terms), intercept)
        conf = raw.get("confidence", 0.95)
        if not isinstance(conf, (int, float)) or not 0 < conf < 1:
            raise ConfigError("confidence must lie in (0, 1)")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        response = raw.get("response", "y")
        if not isinstance(response, str):
            raise ConfigError("response must be a column name")
        return cls(c, parts["alpha"], parts["mu"], parts["phi"], response, float(conf), seed)

    def to_dict(self):
        return {"c": self.c, "alpha": self.alpha.to_dict(), "mu": self.mu.to_dict(),
                "phi": self.phi.to_dict(), "response": self.response,
                "confidence": self.confidence, "seed": self.seed}

    def columns(self):
        cols = [self.response]
        for part in (self.alpha, self.mu, self.phi):
            cols += [t for t in part.terms if t not in cols]
        return cols


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def load_config(path) -> ModelConfig:
    return ModelConfig.from_dict(read_json(path))


def _read_columns(path, wanted):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, a header row is required") from None
        except csv.Error as exc:
            raise DataError(f"{path}: {exc}") from None
        header = [h.strip() for h in header]
        missing = [w for w in wanted if w not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        idx = {w: header.index(w) for w in wanted}
        cols = {w: [] for w in wanted}
        try:
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not cell.strip() for cell in row):
                    continue
                if len(row) != len(header):
                    raise DataError(f"{path}: line {lineno} has {len(row)} fields, "
                                    f"header has {len(header)}")
                for w in wanted:
                    cell = row[idx[w]].strip()
                    try:
                        val = float(cell)
                    except ValueError:
                        raise DataError(f"{path}: line {lineno}, column {w!r}: "
                                        f"not a number ({cell!r})") from None
                    if not math.isfinite(val):
                        raise DataError(f"{path}: line {lineno}, column {w!r}: non-finite value")
                    cols[w].append(val)
        except csv.Error as exc:
            raise DataError(f"{path}: {exc}") from None
    if not cols[wanted[0]]:
        raise DataError(f"{path}: no data rows")
    return {w: np.array(v) for w, v in cols.items()}


def load_csv_dataset(path, config: ModelConfig):
    """Read a CSV file and build (Dataset, ModelSpec) from the config.

    Errors carry file line numbers (the header is line 1).
    """
    cols = _read_columns(path, config.columns())
    y = cols[config.response]
    out = np.flatnonzero((y < 0) | (y > 1))
    if out.size:
        raise DataError(f"{path}: response outside [0, 1] on line(s) "
                        f"{_lines(out)}")
    other = 1 - config.c
    bad = np.flatnonzero(y == other)
    if bad.size:
        raise DataError(f"{path}: response equals {other}, outside the support of the "
                        f"{'zero' if config.c == 0 else 'one'}-inflated model, on line(s) "
                        f"{_lines(bad)}")
    n = y.size
    mats, names = [], []
    for part in (config.alpha, config.mu, config.phi):
        blocks = ([np.ones(n)] if part.intercept else []) + [cols[t] for t in part.terms]
        mats.append(np.column_stack(blocks))
        names.append(part.columns())
    try:
        spec = ModelSpec(config.c, *mats, config.alpha.link, config.mu.link, config.phi.link,
                         names_alpha=names[0], names_mu=names[1], names_phi=names[2])
        data = Dataset(y, config.c)
    except (DomainError, CollinearityError) as exc:
        raise DataError(f"{path}: {exc}") from None
    return data, spec


def _lines(idx, limit=20):
    shown = ", ".join(str(i + 2) for i in idx[:limit])
    return shown + (f" (+{idx.size - limit} more)" if idx.size > limit else "")


def data_fingerprint(spec: ModelSpec, data: Dataset) -> str:
    """SHA-256 over the response, the three designs and their column names."""
    h = hashlib.sha256()
    h.update(f"c={spec.c};n={data.n}".encode())
    for arr in (data.y, spec.V, spec.X, spec.Z):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    for names in (spec.names_alpha, spec.names_mu, spec.names_phi):
        h.update(("\x1f".join(names) + "\x1e").encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def _clean(obj):
    """Replace NaN/inf by None and numpy scalars by Python ones."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def _component_dict(comp: ComponentFit):
    return {"params": comp.params, "iterations": comp.iterations, "converged": comp.converged,
            "loglik": comp.loglik, "score_norm": comp.score_norm, "message": comp.message}


def model_document(fitted: FittedModel, config: Optional[dict] = None,
                   fingerprint: Optional[str] = None) -> dict:
    p, k, m = fitted.dims
    th = fitted.theta
    if config is None:
        config = fitted.config
    if fingerprint is None:
        if fitted.spec is not None and fitted.data is not None:
            fingerprint = data_fingerprint(fitted.spec, fitted.data)
        else:
            fingerprint = fitted.data_fingerprint
    return {
        "schema": SCHEMA,
        "config": config,
        "c": fitted.c,
        "links": dict(zip(COMPONENTS, (k_.value for k_ in fitted.links))),
        "names": dict(zip(COMPONENTS, (list(nm) for nm in fitted.names))),
        "dims": {"p": p, "k": k, "m": m, "n": fitted.n},
        "theta": {"rho": th.rho, "beta": th.beta, "gamma": th.gamma},
        "inv_information": fitted.inv_information,
        "loglik": {"total": fitted.loglik, "discrete": fitted.loglik_discrete,
                   "continuous": fitted.loglik_continuous},
        "fitted": {"alpha": fitted.alpha, "mu": fitted.mu, "phi": fitted.phi,
                   "eta1": fitted.eta1, "eta2": fitted.eta2, "eta3": fitted.eta3},
        "convergence": {"discrete": _component_dict(fitted.discrete),
                        "continuous": _component_dict(fitted.continuous)},
        "data_fingerprint": fingerprint,
    }


def write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def save_model(fitted: FittedModel, path, config: Optional[dict] = None):
    write_text(path, canonical_json(model_document(fitted, config)))


def _arr(values, name, shape=None):
    if values is None:
        raise ConfigError(f"model file: missing {name}")
    try:
        out = np.array([np.nan if v is None else float(v) for v in _flatten(values)])
    except (TypeError, ValueError):
        raise ConfigError(f"model file: {name} must be numeric") from None
    if shape is not None:
        if out.size != int(np.prod(shape)):
            raise ConfigError(f"model file: {name} has {out.size} entries, dims say "
                              f"{int(np.prod(shape))}")
        out = out.reshape(shape)
    return out


def _flatten(values):
    if isinstance(values, list):
        for v in values:
            yield from _flatten(v)
    else:
        yield values


def _num(v):
    return float("nan") if v is None else float(v)


def _component(raw, name, size):
    try:
        return ComponentFit(_arr(raw["params"], f"{name}.params", (size,)),
                            int(raw["iterations"]), bool(raw["converged"]),
                            _num(raw["loglik"]), _num(raw["score_norm"]), str(raw["message"]))
    except (KeyError, TypeError):
        raise ConfigError(f"model file: malformed convergence record for {name}") from None


def model_from_document(doc) -> FittedModel:
    if not isinstance(doc, dict) or "schema" not in doc:
        raise ConfigError("model file: not an infbeta model document")
    if doc["schema"] != SCHEMA:
        raise SchemaVersionError(f"model file schema {doc['schema']!r} is not supported "
                                 f"(expected {SCHEMA!r})")
    try:
        dims = doc["dims"]
        p, k, m, n = (int(dims[x]) for x in ("p", "k", "m", "n"))
        th, ll, fv = doc["theta"], doc["loglik"], doc["fitted"]
        links = tuple(LinkKind.parse(doc["links"][c]) for c in COMPONENTS)
        names = tuple(tuple(doc["names"][c]) for c in COMPONENTS)
        conv = doc["convergence"]
        c = int(doc["c"])
    except (KeyError, TypeError, ValueError, DomainError) as exc:
        raise ConfigError(f"model file: missing or malformed field ({exc})") from None
    if min(p, k, m, n) < 1:
        raise ConfigError("model file: dimensions must be positive")
    if tuple(len(nm) for nm in names) != (p, k, m):
        raise ConfigError("model file: column names disagree with dims")
    d = p + k + m
    theta = ParameterVector(_arr(th.get("rho"), "theta.rho", (p,)),
                            _arr(th.get("beta"), "theta.beta", (k,)),
                            _arr(th.get("gamma"), "theta.gamma", (m,)))
    per_obs = {key: _arr(fv.get(key), f"fitted.{key}", (n,))
               for key in ("alpha", "mu", "phi", "eta1", "eta2", "eta3")}
    return FittedModel(
        spec=None, data=None, theta=theta,
        inv_information=_arr(doc.get("inv_information"), "inv_information", (d, d)),
        loglik=_num(ll.get("total")), loglik_discrete=_num(ll.get("discrete")),
        loglik_continuous=_num(ll.get("continuous")),
        discrete=_component(conv.get("discrete"), "discrete", p),
        continuous=_component(conv.get("continuous"), "continuous", k + m),
        config=doc.get("config"), c=c, links=links, names=names,
        data_fingerprint=doc.get("data_fingerprint"), **per_obs)


def load_model(path) -> FittedModel:
    return model_from_document(read_json(path))


def stored_fingerprint(path) -> Optional[str]:
    return read_json(path).get("data_fingerprint")


def bind(fitted: FittedModel, spec: ModelSpec, data: Dataset,
         fingerprint: Optional[str] = None) -> FittedModel:
    """Attach design and data to a loaded model after checking they match."""
    if data.n != fitted.n:
        raise ConfigError(f"model was fitted on {fitted.n} observations, data has {data.n}")
    if (spec.p, spec.k, spec.m) != fitted.dims or spec.c != fitted.c:
        raise ConfigError("model and data disagree on the design")
    if fingerprint is None:
        fingerprint = fitted.data_fingerprint
    if fingerprint is not None and fingerprint != data_fingerprint(spec, data):
        raise ConfigError("data do not match the data the model was fitted on "
                          "(fingerprint differs)")
    return replace(fitted, spec=spec, data=data)


# ---------------------------------------------------------------------------
# tables and plots
# ---------------------------------------------------------------------------

def fmt(value) -> str:
    """17 significant digits for floats (exact round trip), plain ints and strings."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "NA"
        if math.isinf(v):
            return "Inf" if v > 0 else "-Inf"
        return format(v, ".17g")
    return str(value)


def write_table(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_table(path):
    """(header, rows) with numeric cells parsed back to float."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for row in reader:
            parsed = []
            for cell in row:
                if cell == "NA":
                    parsed.append(float("nan"))
                    continue
                try:
                    parsed.append(float(cell.replace("Inf", "inf")))
                except ValueError:
                    parsed.append(cell)
            rows.append(parsed)
    return header, rows


def svg_scatter(path, x, y, title, xlabel, ylabel, bands=None, hlines=(), width=480,
                height=360):
    """Minimal dependency-free scatter plot; ``bands`` draws extra polylines."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ok = np.isfinite(x) & np.isfinite(y)
    series = [y[ok]] + [np.asarray(b, float)[ok] for b in (bands or [])]
    allv = np.concatenate(series + [np.asarray(hlines, float)])
    allv = allv[np.isfinite(allv)]
    xs = x[ok]
    x0, x1 = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    y0, y1 = (float(allv.min()), float(allv.max())) if allv.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    ml, mr, mt, mb = 56, 16, 28, 44
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
           f'<text x="{width / 2:.1f}" y="{height - 8}" text-anchor="middle" '
           f'font-size="11">{xlabel}</text>',
           f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="11" '
           f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{ylabel}</text>']
    for v, anchor, pos in ((y0, "end", py(y0)), (y1, "end", py(y1))):
        out.append(f'<text x="{ml - 4}" y="{pos + 4:.1f}" text-anchor="{anchor}" '
                   f'font-size="10">{v:.3g}</text>')
    for v in (x0, x1):
        out.append(f'<text x="{px(v):.1f}" y="{mt + ph + 14}" text-anchor="middle" '
                   f'font-size="10">{v:.3g}</text>')
    for h in hlines:
        if y0 <= h <= y1:
            out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{py(h):.2f}" y2="{py(h):.2f}" '
                       'stroke="grey" stroke-dasharray="4 3"/>')
    for b in series[1:]:
        pts = " ".join(f"{px(a):.2f},{py(v):.2f}" for a, v in zip(xs, b))
        out.append(f'<polyline points="{pts}" fill="none" stroke="grey"/>')
    for a, v in zip(xs, series[0]):
        out.append(f'<circle cx="{px(a):.2f}" cy="{py(v):.2f}" r="2" fill="black"/>')
    out.append("</svg>")
    write_text(path, "\n".join(out) + "\n")


def ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc.strerror}") from None
