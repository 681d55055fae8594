"""Mesh refinement study on the manufactured solution.

Marches the decaying sine-product solution to a short final time on a
doubling sequence of meshes and prints the observed L2 errors and orders
for u_h and q_h.  The short horizon keeps the demo around a minute; on
these coarse levels the orders approach k+1 from below.
"""

import numpy as np

from chkp_hdg import cli, mesh, scenarios, timestep

T_FINAL = 0.2
DT = 1e-3
LEVELS = (2, 4, 8)


def main():
    for k in (1, 2):
        print(f"degree k = {k}")
        prev = None
        for n in LEVELS:
            scenario = scenarios.mms_scenario(T_FINAL)
            msh = mesh.build_mesh(scenario.domain, n, n)
            config = timestep.TimeConfig(dt=DT, t_final=T_FINAL)
            states, _, _ = timestep.run(scenario, msh, k, config)
            err_u, err_q = cli.compute_errors(states, scenario, msh, T_FINAL)
            if prev is None:
                print(f"  N={n:3d}  err_u {err_u:.3e}          "
                      f"err_q {err_q:.3e}")
            else:
                ord_u = np.log2(prev[0] / err_u)
                ord_q = np.log2(prev[1] / err_q)
                print(f"  N={n:3d}  err_u {err_u:.3e} ({ord_u:.2f})  "
                      f"err_q {err_q:.3e} ({ord_q:.2f})")
            prev = (err_u, err_q)
        print()


if __name__ == "__main__":
    main()
