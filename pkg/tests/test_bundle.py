import json

import numpy as np
import pytest
import scipy.sparse as sp

from imor.bundle import MANIFEST, export_decoupled, read_bundle, write_bundle
from imor.errors import MissingArtifactError
from imor.gasnet import GasProperties, assemble_dae, chain_network, structured_decouple


def test_round_trip_exact(tmp_path, rng):
    D = rng.standard_normal((4, 3))
    S = sp.random(6, 5, density=0.4, random_state=1, format="csr")
    write_bundle(tmp_path, {"D": D, "S": S, "skip": None}, {"kind": "test", "n": 4})
    manifest, mats = read_bundle(tmp_path)
    assert manifest["kind"] == "test" and set(mats) == {"D", "S"}
    assert manifest["matrices"]["S"]["shape"] == [6, 5]
    assert np.array_equal(mats["D"], D)
    assert sp.issparse(mats["S"]) and (mats["S"] != S).nnz == 0


def test_missing_pieces(tmp_path):
    with pytest.raises(MissingArtifactError):
        read_bundle(tmp_path)
    write_bundle(tmp_path, {"A": np.eye(2)}, {})
    (tmp_path / "A.mtx").unlink()
    with pytest.raises(MissingArtifactError) as info:
        read_bundle(tmp_path)
    assert info.value.missing[0].endswith("A.mtx")


def test_decoupled_export(tmp_path):
    dec = structured_decouple(assemble_dae(chain_network(3, length=100.0, diameter=0.5, friction=0.01,
                                                         gas=GasProperties())))
    export_decoupled(dec, tmp_path)
    manifest, mats = read_bundle(tmp_path)
    assert (manifest["n"], manifest["n_p"], manifest["n_q"]) == (dec.n, dec.n_p, dec.n_q)
    assert mats["E_p"].shape == (dec.n_p, dec.n_p)
    assert np.allclose(np.asarray(sp.csr_matrix(mats["A_q"]).todense()),
                       np.asarray(sp.csr_matrix(dec.A_q).todense()))
    assert json.loads((tmp_path / MANIFEST).read_text())["kind"] == "decoupled"
