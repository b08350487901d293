"""Suite-wide checks on every forward pass.

``lerp.model.forward`` is wrapped before any test module imports it, so each
call anywhere in the suite verifies that both attention vectors are
distributions over the real words and exactly zero on padding.
"""

import numpy as np

import lerp.model

ATTENTION_SUM_TOL = 1e-6


class AttentionAudit:
    def __init__(self):
        self.calls = 0
        self.failures = []

    def check(self, out, mask):
        self.calls += 1
        for name in ("alpha_E", "alpha_Y"):
            a = getattr(out, name).value
            real = np.ones(a.shape, bool) if mask is None else np.asarray(mask, bool)
            total = a[real].sum()
            if abs(total - 1.0) > ATTENTION_SUM_TOL or np.any(a[~real] != 0) or np.any(a < 0):
                self.failures.append(f"{name}: sum {total!r}, padding max {np.abs(a[~real]).max(initial=0.0)!r}")
                raise AssertionError(f"attention invariant broken: {self.failures[-1]}")


AUDIT = AttentionAudit()
_original_forward = lerp.model.forward


def _audited_forward(*args, **kwargs):
    out = _original_forward(*args, **kwargs)
    mask = kwargs.get("mask", args[6] if len(args) > 6 else None)
    AUDIT.check(out, mask)
    return out


_audited_forward.__wrapped__ = _original_forward
lerp.model.forward = _audited_forward


def pytest_terminal_summary(terminalreporter):
    if not AUDIT.calls:
        return
    status = "PASS" if not AUDIT.failures else "FAIL"
    terminalreporter.write_line(
        f"[{status}] attention audit: {AUDIT.calls} forward calls checked, "
        f"{len(AUDIT.failures)} violated sum-to-one or zero-on-padding"
    )
