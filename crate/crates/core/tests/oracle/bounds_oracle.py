"""Reference values for the bound formulas, evaluated in 50-digit arithmetic.

Regenerate with:  python3 bounds_oracle.py > ../data/bounds_oracle.json
"""
import json
import random

from mpmath import mp, mpf, sqrt, log, exp, pi

mp.dps = 50


def box_ok(b):
    lo = max(1 / b["A_sigma"], b["a_sigma_tilde"])
    hi = min(b["A_sigma_tilde"], 1 / b["a_sigma"])
    return lo <= hi


def random_case(rng):
    while True:
        k = rng.randint(1, 5)
        a_beta = rng.uniform(0.05, 1.0)
        a_sigma = rng.uniform(0.1, 1.0)
        a_st = rng.uniform(0.05, 0.5)
        b = {
            "a_beta": a_beta,
            "A_beta": a_beta * rng.uniform(1.0, 4.0),
            "a_sigma": a_sigma,
            "A_sigma": a_sigma * rng.uniform(1.0, 10.0),
            "a_sigma_tilde": a_st,
            "A_sigma_tilde": a_st * rng.uniform(1.0, 10.0),
            "a_pi": rng.uniform(0.01, 1.0 / k),
        }
        if box_ok(b):
            break
    design = [[rng.uniform(-2, 2) for _ in range(3)] for _ in range(5)]
    return {
        "box": b,
        "n": rng.randint(10, 100000),
        "p": rng.randint(1, 500),
        "q": rng.randint(1, 5),
        "k": k,
        "design": design,
        "kappa": rng.uniform(1, 100),
        "kappa_prime": rng.uniform(1, 500),
        "m": rng.uniform(0, 50),
        "delta": rng.uniform(0.01, 10),
        "lambda": rng.uniform(0, 100),
        "kl_ref": rng.uniform(0, 2),
        "l1_ref": rng.uniform(0, 20),
        "y_sup": rng.uniform(0, 10),
    }


def evaluate(c):
    b = {key: mpf(v) for key, v in c["box"].items()}
    aB, AB = b["a_beta"], b["A_beta"]
    aS, AS = b["a_sigma"], b["A_sigma"]
    tAS = b["A_sigma_tilde"]
    api = b["a_pi"]
    n, p, q, k = c["n"], c["p"], c["q"], c["k"]
    ln = log(mpf(n))
    kap, kp = mpf(c["kappa"]), mpf(c["kappa_prime"])
    m, delta, lam = mpf(c["m"]), mpf(c["delta"]), mpf(c["lambda"])
    kl_ref, l1_ref = mpf(c["kl_ref"]), mpf(c["l1_ref"])

    rows = c["design"]
    xmax = sqrt(sum(max(mpf(v) ** 2 for v in row) for row in rows) / len(rows))

    M = AB + sqrt(AB**2 + 4 * ln / aS)
    C = max(1 / api, AS + (M + AB) ** 2 * AS**2 / 2, q * (M + AB) * AS / 2)
    y = mpf(c["y_sup"])
    C_y = max(1 / api, AS + (y + AB) ** 2 * AS**2 / 2, q * (y + AB) * AS / 2)
    R = 2 * C * (1 + k * (AB + tAS))
    D = m * xmax * ln * sqrt(k * log(2 * p + 1)) + 6 * (1 + k * (AB + tAS))
    logN = (
        (4 * C**2 * k**2 * q**2 * m**2 * xmax**2 / delta**2) * log(2 * p + 1)
        + k * log(1 + 8 * C * q**2 * k * AS / delta)
        + k * log(1 + 8 * C / delta)
    )
    U = max(AS, 1 / api) * (1 + 4 * (q + 1) * AS * (AB**2 + ln / aS))
    lam_thr = kap * U * sqrt(mpf(k) / n) * (1 + q * xmax * ln * sqrt(k * log(2 * p + 1)))
    internal = 4 * C / sqrt(n) * sqrt(k) * (1 + 9 * q * xmax * ln * sqrt(k * log(2 * p + 1)))
    tail_stmt = (
        exp(mpf(-1) / 2) * pi ** (mpf(q) / 2) / (q * AS) ** (mpf(q) / 2)
        * sqrt(2 * k * n * q * api)
        * exp(-(M**2 - 2 * M * AB + aB**2) * aS / 4)
    )
    tail_proof = 2 * k * n * q * api * exp(-(M**2 - 2 * M * AB + aB**2) * aS / 2)
    gauss = exp(mpf(-1) / 2 - aB**2 * aS / 4) * pi ** (mpf(q) / 2) / (q * AS) ** (mpf(q) / 2)
    approx = (1 + 1 / kap) * (kl_ref + lam * l1_ref)
    rem1 = sqrt(mpf(k) / n) * kp * (gauss * api * sqrt(2 * q) + U * k * (1 + AB + tAS) ** 2)
    U2 = max(AS, 1 / api) * (1 + 2 * (q + 1) * AS * (AB**2 + ln / aS))
    rem2 = kp * sqrt(mpf(k) / n) * gauss * sqrt(2 * q * api) + kp * sqrt(mpf(k) / n) * kp * k * U2 * (
        1 + AB + tAS
    ) ** 2
    out = {
        "x_max_n": xmax,
        "m_n": M,
        "c_mn": C,
        "c_mn_majorant": U,
        "gradient_bound": C_y,
        "r_n": R,
        "delta_m": D,
        "log_packing": logN,
        "lambda_threshold": lam_thr,
        "internal_threshold": internal,
        "tail_statement": tail_stmt,
        "tail_proof": tail_proof,
        "approximation_term": approx,
        "remainder_term": rem1,
        "rhs_total": approx + lam + rem1,
        "remainder_term_variant": rem2,
        "rhs_total_variant": approx + lam + rem2,
    }
    return {key: float(v) for key, v in out.items()}


def main():
    rng = random.Random(20240611)
    cases = []
    for _ in range(50):
        c = random_case(rng)
        c["expected"] = evaluate(c)
        cases.append(c)
    print(json.dumps(cases, indent=1))


if __name__ == "__main__":
    main()
