"""Re-verify the bundled published certificates (pendulum RWS and RSWS, hysteresis RWS)."""

import dataclasses
import time

from hybridsyn.cli import _compile
from hybridsyn.problem import load, read_certificate
from hybridsyn.verify import Status, verify_all

CASES = [
    ("sys5_ct", "pendulum.cert", "rws", None),
    ("sys5_ct", "pendulum.cert", "rsws", -14.0381),
    ("hysteresis", "hysteresis.cert", "rws", None),
]


def main():
    ok = True
    for name, cert_file, kind, beta in CASES:
        pr = load(name)
        cert = read_certificate(cert_file, pr)
        _, cs = _compile(pr, cert, dataclasses.replace(pr.spec, kind=kind), beta)
        t0 = time.perf_counter()
        res = verify_all(cs, pr.prover)
        dt = time.perf_counter() - t0
        for g in res:
            slow = max((v.seconds for v in g.verdicts), default=0.0)
            print(f"{name:11} {kind:5} phi{g.group:<3} {g.status.value:13} {len(g.verdicts):3d} branch(es)  "
                  f"slowest {slow:.3f}s")
        good = all(g.status is Status.PROVED for g in res)
        ok &= good
        print(f"{name} {kind}: {'all proved' if good else 'NOT proved'} in {dt:.2f}s\n")
    raise SystemExit(0 if ok else 1)


if __name__ == "__main__":
    main()
