"""Smoke test for the mesoplatoon Python extension."""

import math

import mesoplatoon as mp


def main():
    cp = mp.constants("constant")
    vp = mp.constants("variable")
    assert abs(cp["gamma_tilde"] - 0.5237828) < 1e-6, cp
    assert abs(vp["gamma_tilde"] - 0.5) < 1e-12, vp
    assert cp["valid"] and vp["valid"]

    cert = mp.certificate("variable")
    assert cert["q_diagonal"] == [3.0, 2.0, 3.0, 3.5]
    assert [d[:3] for d in cert["discrepancies"]] == [("Q", 2, 3)]

    sc = mp.Scenario.paper("variable")
    sc.set("scenario.t_end", 12.0)
    sc.set("scenario.n_vehicles", 11)
    sc.seed = 7
    assert sc.n_vehicles == 11 and sc.seed == 7
    traj = sc.simulate()
    assert len(traj) == 1201 and traj.n_vehicles == 11
    assert len(traj.rho(3)) == 2
    assert max(abs(u) for u in traj.u_app(0)) <= 4.0 + 1e-12
    k = traj.time.index(9.99)
    assert max(traj.error_norm(i)[k] for i in range(11)) < 0.05

    report = traj.analyze()
    assert report["certificate.verdict"] == "PASS"
    assert "Stability report" in report["text"]

    again = mp.Scenario.from_config(sc.to_config())
    assert again.to_config() == sc.to_config()
    assert mp.simulate(again).to_csv() == traj.to_csv()

    eq = mp.Scenario.disturbance_free("constant")
    eq.set("scenario.t_end", 5.0)
    eq.at_equilibrium()
    assert eq.simulate().max_error_norm() == 0.0

    try:
        mp.Scenario.from_config("scenario.policy = constant\ncontroller.a = x\n")
    except ValueError as e:
        assert "line 2" in str(e)
    else:
        raise AssertionError("bad config accepted")

    print(
        "smoke test ok: gamma_tilde cp=%.4f vp=%.4f, max |error| at t=9.99 s %.2e"
        % (cp["gamma_tilde"], vp["gamma_tilde"], max(traj.error_norm(i)[k] for i in range(11)))
    )
    assert math.isfinite(traj.max_error_norm())


if __name__ == "__main__":
    main()
