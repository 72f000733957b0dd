"""Drive 10 m over sandpaper-like texture and dead-reckon the path back.

Run: python demos/straight_line.py
"""

import numpy as np

from gabor_odo.decoder import decode_stream
from gabor_odo.mask import FIXED_GABOR, rasterize
from gabor_odo.odometry import integrate, score
from gabor_odo.sensor_sim import HeightProfile, SensorConfig, simulate, xi_ground
from gabor_odo.texture import TextureSpec, generate
from gabor_odo.trajectory import GyroModel, generate_path, gyro_measure


def main():
    cfg = SensorConfig()
    masks = rasterize(FIXED_GABOR, cfg.view_px)
    xg = xi_ground(FIXED_GABOR.xi0, cfg)
    print(f"carrier on the ground: {xg:.1f} cycles/m, so 0.25 m/s should read {xg * 0.25:.1f} Hz")

    tex = generate(TextureSpec("bandlimited_noise", {"low": 5.0, "high": 300.0, "seed": 1}))
    path = generate_path("straight", {"v": 0.25}, 40.0)
    _, sig = simulate(tex, masks, cfg, path, HeightProfile("per_window", range_pct=10.0), seed=1)

    est = decode_stream(sig, 10, xg)
    v = np.array([e.v_hat for e in est])
    print(f"{len(est)} accepted windows, speed median {np.median(v):.3f} m/s, p5..p95 "
          f"{np.percentile(v, 5):.3f}..{np.percentile(v, 95):.3f}")

    omega = gyro_measure(path, GyroModel(noise_std=0.002, seed=1))
    track = integrate(est, omega, t=path.t)
    s = score(track, path)
    print(f"end point ({track.x_m[-1]:.3f}, {track.y_m[-1]:.3f}) m vs (10, 0) m; "
          f"ATE {s.ate_m:.3f} m, drift {s.drift_pct:.2f}% of path length")


if __name__ == "__main__":
    main()
