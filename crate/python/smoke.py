"""Smoke test for the demix extension module.

Run after `pip install --no-build-isolation -e crates/python`.
"""
import math
import pathlib
import sys
import tempfile

import demix

ROOT = pathlib.Path(__file__).resolve().parent.parent


def main():
    basis = demix.FockBasis(2, 2, "fermion", 1, 2)
    assert basis.dim == 3 * 4
    assert basis.commutation_defect(1) < 1e-12
    n = basis.number()
    assert all(abs(n[i][i].real - sum(s)) < 1e-15 for i, s in enumerate(basis.states()))

    energies = demix.box_energies(2.0, 3)
    exact = [(k * math.pi / 2.0) ** 2 / 2.0 for k in (1, 2, 3)]
    assert all(abs(e - x) / x < 1e-3 for e, x in zip(energies, exact)), energies

    w = demix.OneParticleState([[0.5, 0.5], [0.5, 0.5]])
    assert abs(w.purity() - 1.0) < 1e-12
    path = w.dephase([1.0, 2.0], gamma=0.3, dt=0.01, steps=100, exact=True)
    coherence = abs(path[-1][0][1])
    assert abs(coherence - 0.5 * math.exp(-0.3)) < 1e-9, coherence

    try:
        demix.OneParticleState([[2.0, 0.0], [0.0, 0.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("trace two accepted")

    names = [c[0] for c in demix.list_checks()]
    assert "demix.mixture_equivalence" in names

    scenario = ROOT / "scenarios" / "golden.toml"
    assert demix.validate_scenario(str(scenario)) == 49
    manifest = demix.run_scenario(str(scenario))
    failed = [c for c in manifest.checks() if not c[3]]
    assert manifest.all_pass(), failed
    columns, rows = manifest.series("microsystem")
    assert columns[0] == "time" and len(rows) > 1
    with tempfile.TemporaryDirectory() as out:
        written = manifest.emit(out)
        assert any(p.endswith("manifest.json") for p in written)

    print(f"ok: {len(manifest.checks())} checks pass, hash {manifest.scenario_hash[:12]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
