"""Trajectory CSV reading and writing.

One row per recorded sample with a fixed column layout:

    t, s_1..s_n, v_1..v_n, u_1..u_n, v_0, phi, V

where phi is the safety barrier value (nan where undefined or not
requested) and V the Lyapunov function value (nan when not requested).
Floats are written with %.17g so a round trip through the file is exact and
identical inputs produce byte-identical files.
"""

import numpy as np

from .simulation import Trajectory


def trajectory_columns(n):
    cols = ["t"]
    cols += [f"s_{i}" for i in range(1, n + 1)]
    cols += [f"v_{i}" for i in range(1, n + 1)]
    cols += [f"u_{i}" for i in range(1, n + 1)]
    cols += ["v_0", "phi", "V"]
    return cols


def write_trajectory_csv(traj, path, phi=None, lyapunov=None):
    """Write a Trajectory; phi/lyapunov are optional per-sample columns."""
    m, n = traj.s.shape
    nan = np.full(m, np.nan)
    phi = nan if phi is None else np.asarray(phi, dtype=float)
    lyap = nan if lyapunov is None else np.asarray(lyapunov, dtype=float)
    if phi.shape != (m,) or lyap.shape != (m,):
        raise ValueError("phi and lyapunov columns must have one value per sample")
    data = np.column_stack([traj.t, traj.s, traj.v, traj.u, traj.v0, phi, lyap])
    header = ",".join(trajectory_columns(n))
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def read_trajectory_csv(path):
    """Read a trajectory file back into a Trajectory.

    The phi and V columns come back under meta["phi"] / meta["lyapunov"]
    (possibly all-nan); meta["source"] records the path.
    """
    with open(path) as fh:
        header = fh.readline().strip()
    cols = header.split(",")
    expected_tail = ["v_0", "phi", "V"]
    if cols[:1] != ["t"] or cols[-3:] != expected_tail or (len(cols) - 4) % 3 != 0:
        raise ValueError(f"not a trajectory CSV (columns {cols[:4]}...)")
    n = (len(cols) - 4) // 3
    if cols != trajectory_columns(n):
        raise ValueError("trajectory CSV columns out of order")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(cols):
        raise ValueError("trajectory CSV row width does not match its header")
    t = data[:, 0]
    s = data[:, 1 : 1 + n]
    v = data[:, 1 + n : 1 + 2 * n]
    u = data[:, 1 + 2 * n : 1 + 3 * n]
    v0 = data[:, 1 + 3 * n]
    meta = {"source": str(path), "phi": data[:, -2], "lyapunov": data[:, -1]}
    return Trajectory(t=t, s=s, v=v, u=u, v0=v0, meta=meta)
