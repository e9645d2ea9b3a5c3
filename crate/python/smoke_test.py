"""Smoke test for the ringqcnn_py extension module.

Builds are found automatically: run `cargo build -p ringqcnn-py` first, then
`python3 python/smoke_test.py` from anywhere inside the repository. An
installed module also works.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path


def _import_module():
    try:
        import ringqcnn_py
        return ringqcnn_py
    except ImportError:
        pass
    root = Path(__file__).resolve().parent.parent
    candidates = [
        root / "target" / profile / name
        for profile in ("debug", "release")
        for name in ("libringqcnn_py.so", "ringqcnn_py.so", "libringqcnn_py.dylib")
    ]
    for built in candidates:
        if built.exists():
            stage = Path(tempfile.mkdtemp(prefix="ringqcnn_py_"))
            shutil.copy2(built, stage / "ringqcnn_py.so")
            sys.path.insert(0, str(stage))
            import ringqcnn_py
            return ringqcnn_py
    raise SystemExit(
        "ringqcnn_py not found; run `cargo build -p ringqcnn-py` first"
    )


rq = _import_module()


def check(name, condition):
    if not condition:
        raise SystemExit(f"FAIL {name}")
    print(f"ok {name}")


# Bell state on the raw simulator.
sv = rq.StateVector(2)
sv.apply_ry(0, math.pi / 2)
sv.apply_cnot(0, 1)
amps = sv.amplitudes()
isq = 1 / math.sqrt(2)
check(
    "bell state amplitudes",
    all(
        abs(a - e) < 1e-10
        for a, e in zip(amps, [complex(isq), complex(0), complex(0), complex(isq)])
    ),
)
check("bell state norm", abs(sv.norm_sqr() - 1.0) < 1e-12)
check("bell state <Z>", abs(sv.expectation_z(0)) < 1e-10)

# Circuit planning and parameter accounting.
plan18 = rq.CircuitPlan.build(18, 1)
check("plan d=18 gate count", plan18.gate_count == 234)
check("plan d=18 final active", plan18.final_active == list(range(9, 18)))
check("param count d=18", rq.ModelParams.count(18, 1) == 55)

plan = rq.CircuitPlan.build(8, 1)
check("readout qubits", plan.readout_qubits == [4, 5, 6, 7])

# Seeded initialization is reproducible.
p1 = rq.ModelParams.init(8, 1, 7)
p2 = rq.ModelParams.init(8, 1, 7)
check("seeded init reproduces", p1.to_flat() == p2.to_flat())
check("flat round trip", rq.ModelParams.from_flat(8, 1, p1.to_flat()).to_flat() == p1.to_flat())

# Forward pass: probabilities are a distribution; at all-zero parameters the
# circuit reduces to Ry encodings plus the pool CNOTs, so each readout
# expectation is cos(x_i) * cos(x_{i+4}).
x = [0.31, -0.94, 1.57, 0.08, -2.4, 0.66, 2.9, -1.2]
out = rq.forward(x, p1, plan)
check("probs sum to one", abs(sum(out.probs) - 1.0) < 1e-12)
check("probs in range", all(0.0 <= p <= 1.0 for p in out.probs))

zeros = rq.ModelParams.zeros(8, 1)
expect = rq.forward(x, zeros, plan).expectations
check(
    "zero-parameter closed form",
    all(
        abs(e - math.cos(x[i]) * math.cos(x[i + 4])) < 1e-10
        for i, e in enumerate(expect)
    ),
)

# Parameter-shift gradient agrees with finite differences.
shift = rq.gradient(x, 1, p1, plan, "parameter-shift")
fd = rq.gradient(x, 1, p1, plan, "finite-diff")
check("gradient length", len(shift) == 35)
check(
    "gradient methods agree",
    all(
        abs(a - b) <= 1e-6 or abs(a - b) <= 1e-4 * max(abs(a), abs(b))
        for a, b in zip(shift, fd)
    ),
)

# Loss is positive and consistent with the returned probabilities.
loss = rq.loss(x, 1, p1, plan)
check("loss matches probs", abs(loss + math.log(out.probs[1])) < 1e-12)

# Angle scaling clamps and lands in [-pi, pi].
scaled = rq.angle_scale([-10.0, -1.5, 0.0, 1.5, 10.0], 3.0)
check("angle scale bounds", all(abs(v) <= math.pi + 1e-12 for v in scaled))
check("angle scale clamps", abs(scaled[0] + math.pi) < 1e-12 and abs(scaled[4] - math.pi) < 1e-12)

# Errors arrive as ValueError with the class-prefixed message.
try:
    rq.CircuitPlan.build(6, 1)
    raise SystemExit("FAIL error propagation: build(6, 1) must raise")
except ValueError as e:
    check("error class prefix", str(e).startswith("config:"))
try:
    rq.load_checkpoint("/nonexistent/checkpoint.txt")
    raise SystemExit("FAIL error propagation: missing checkpoint must raise")
except ValueError as e:
    check("checkpoint error prefix", str(e).startswith("data:"))

print("all smoke checks passed")
