"""Tune the nominal plant loop, pick the FROB filter and check robustness."""
from hfc.analysis import filter_bands, loop_transfer, robust_check_delay, robust_check_params, template_q
from hfc.assets import AssetParams, all_corners, build_asset_dynamics
from hfc.design import design_loop
from hfc.lti import TransferFunction

g = build_asset_dynamics(AssetParams())
ld = design_loop(g, bw_hz=0.25, pm_deg=150.0, omega_noise=50.0, omega_resp=1.0)
print(f"PI: kp={ld.kp:.4g} ki={ld.ki:.4g}, bandwidth {ld.bandwidth_hz:.3g} Hz, "
      f"phase margin {ld.phase_margin_deg:.1f} deg (target met: {ld.pm_met})")
print(f"Q: degree {ld.q_n}, cut-off {ld.q_omega_c:.4g} rad/s")
one = TransferFunction.gain(1.0)
for n in (1, 2, 3):
    b = filter_bands(template_q(n, ld.q_omega_c), g, ld.c_p, one, g)
    print(f"  degree {n}: response accepted up to {b.acceptance_edge:.3g} rad/s, "
          f"noise attenuated from {b.attenuation_edge:.3g} rad/s")

l = loop_transfer(ld.q, ld.c_p, g, g)
rd = robust_check_delay(l, t_max=2.0)
rp = robust_check_params(g, [build_asset_dynamics(p) for p in all_corners(AssetParams())], l)
print(f"delay up to 2 s: satisfied {rd.satisfied}, margin ratio {rd.min_margin_ratio:.3g}")
print(f"64 parameter corners: satisfied {rp.satisfied}, margin ratio {rp.min_margin_ratio:.3g}")
