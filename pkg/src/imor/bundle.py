"""Matrix Market bundles with a JSON manifest.

A bundle is a directory holding one ``.mtx`` file per coefficient matrix and
``manifest.json`` listing them together with dimensions and metadata.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.io as sio
import scipy.sparse as sp

from .errors import MissingArtifactError, ValidationError

MANIFEST = "manifest.json"


def _write_matrix(path, M):
    if sp.issparse(M):
        sio.mmwrite(str(path), sp.coo_matrix(M), precision=17)
    else:
        M = np.atleast_2d(np.asarray(M, dtype=float))
        sio.mmwrite(str(path), M, precision=17)


def write_bundle(directory, matrices: dict, meta: dict):
    """Write ``matrices`` (name -> dense or sparse) and ``meta`` to ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, M in matrices.items():
        if M is None:
            continue
        fn = f"{name}.mtx"
        _write_matrix(d / fn, M)
        files[name] = {"file": fn, "shape": list(M.shape)}
    manifest = dict(meta)
    manifest["matrices"] = files
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d / MANIFEST


def read_bundle(directory):
    """``(manifest, matrices)``; raises if the manifest or a listed file is absent."""
    d = Path(directory)
    mf = d / MANIFEST
    if not mf.is_file():
        raise MissingArtifactError([str(mf)])
    try:
        manifest = json.loads(mf.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{mf}: {exc.msg}") from exc
    entries = manifest.get("matrices", {})
    missing = [str(d / e["file"]) for e in entries.values() if not (d / e["file"]).is_file()]
    if missing:
        raise MissingArtifactError(missing)
    mats = {}
    for name, e in entries.items():
        M = sio.mmread(str(d / e["file"]))
        mats[name] = M.tocsr() if sp.issparse(M) else np.asarray(M)
    return manifest, mats


def export_decoupled(dec, directory, extra=None):
    """Coefficients of a decoupled system plus dimensions, form and tolerance."""
    mats = {
        "E_p": dec.E_p, "A_p": dec.A_p, "B_p": dec.B_p, "C_p": dec.C_p,
        "E_q": dec.E_q, "A_q": dec.A_q, "B_q": dec.B_q, "C_q": dec.C_q,
        "p0": dec.p0.basis, "q0": dec.q0.basis, "T": dec.transport,
    }
    meta = {"kind": "decoupled", "form": dec.form, "n": dec.n, "n_p": dec.n_p, "n_q": dec.n_q,
            "tolerance": dec.tolerance}
    meta.update(extra or {})
    return write_bundle(directory, mats, meta)


def export_reduced(rom, directory, extra=None):
    """Bases and projected coefficients of an index-aware reduced model."""
    mats = {
        "V_p": rom.V_p, "V_q": rom.V_q,
        "E_pr": rom.E_pr, "A_pr": rom.A_pr, "B_pr": rom.B_pr, "C_pr": rom.C_pr,
        "E_qr": rom.E_qr, "A_qr": rom.A_qr, "B_qr": rom.B_qr, "C_qr": rom.C_qr,
    }
    meta = {"kind": "irom", "r_p": rom.r_p, "r_q": rom.r_q, "r": rom.r, "n": rom.n_full,
            "m_f": 0 if rom.deim is None else rom.deim.m}
    if rom.deim is not None:
        mats["deim_U"] = rom.deim.U
        meta["deim_rows"] = [int(i) for i in rom.deim.rows]
    meta.update(extra or {})
    return write_bundle(directory, mats, meta)


def export_galerkin(model, directory, extra=None):
    """Basis and projected coefficients of a one-sided Galerkin model."""
    mats = {"V": model.V, "M_r": model.mass, "A_r": model.A, "B_r": model.B, "C_r": model.C,
            "rate_r": model.input_rate}
    meta = {"kind": "galerkin", "r": model.r, "n": model.n_full,
            "m_f": 0 if model.deim is None else model.deim.m}
    if model.deim is not None:
        mats["deim_U"] = model.deim.U
        meta["deim_rows"] = [int(i) for i in model.deim.rows]
    meta.update(extra or {})
    return write_bundle(directory, mats, meta)
