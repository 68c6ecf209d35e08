import numpy as np
import pytest

from jpais.metrics import (
    ALGORITHMS,
    CSV_COLUMNS,
    RunMetrics,
    complexity_count,
    count_ber,
    empirical_sinr,
    mean_ci95,
    mutual_information,
    normalized_throughput,
    overhead,
    read_csv,
    recursion_counts,
    write_csv,
)


def test_count_ber_cases(rng):
    tx = rng.integers(0, 2, size=(500, 2))
    assert count_ber(tx, tx) == 0.0
    assert count_ber(tx, 1 - tx) == 1.0
    rx = tx.copy().reshape(-1)
    rx[[3, 400, 999]] ^= 1
    assert count_ber(tx, rx.reshape(500, 2)) == pytest.approx(0.003, abs=1e-15)


def test_count_ber_skips_training(rng):
    tx = rng.integers(0, 2, size=(100, 2))
    rx = tx.copy()
    rx[:10] ^= 1
    assert count_ber(tx, rx, skip=10) == 0.0
    with pytest.raises(ValueError):
        count_ber(tx, rx[:-1])
    with pytest.raises(ValueError):
        count_ber(tx, rx, skip=100)


def test_normalized_throughput_values():
    assert normalized_throughput(0.0, R=0.7) == 0.7
    assert normalized_throughput(1.0) == 0.0
    assert abs(normalized_throughput(1e-4) - (1 - 1e-4) ** 3000) <= 1e-12
    assert normalized_throughput(1e-4) == pytest.approx(0.7408, abs=1e-4)
    nt = normalized_throughput(np.linspace(0, 1, 200))
    assert np.all(np.diff(nt) <= 0)
    with pytest.raises(ValueError):
        normalized_throughput(-0.1)


def test_mutual_information_values():
    assert mutual_information(0.0) == 0.0
    assert mutual_information(1.0, n_p=1) == 1.0
    assert mutual_information(3.0, n_p=2) == 1.0
    with pytest.raises(ValueError):
        mutual_information(-1.0)


def test_empirical_sinr_recovers_known_ratio(rng):
    n = 200_000
    b = (rng.choice([-1, 1], n) + 1j * rng.choice([-1, 1], n)) / np.sqrt(2)
    noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(0.25 / 2)
    y = 2.0 * b + noise
    assert empirical_sinr(y, b) == pytest.approx(16.0, rel=0.02)


def test_mean_ci95():
    m, ci = mean_ci95([1.0, 1.0, 1.0])
    assert (m, ci) == (1.0, 0.0)
    m, ci = mean_ci95([0.0, 2.0])
    assert m == 1.0 and ci == pytest.approx(1.96 * np.sqrt(2) / np.sqrt(2))
    assert mean_ci95([0.5]) == (0.5, 0.0)
    with pytest.raises(ValueError):
        mean_ci95([])


# hand-expanded monomial forms of the per-symbol operation counts, n = n_r

def hand_W(K, M, n):
    adds = 2*M*M*n*n + 4*M*M*n + 2*M*M + 2*K*M*n + 2*K*M - M*n - M + 1
    mults = 3*M*M*n*n + 6*M*M*n + 3*M*M + 2*K*M*n + 2*K*M + 3*M*n + 3*M + 1
    return adds, mults


def hand_aT(K, M, L, n):
    adds = (6*K*K*n*n + 16*K*K*n + 10*K*K + K*L*n + K*L + K*M*n + K*M
            + 2*K*n + 2*K + n + 2)
    mults = (K**3*n*n + 2*K**3*n + K**3 + K*K*L*n*n + 2*K*K*L*n + K*K*L
             + 3*K*K*n*n + 7*K*K*n + 4*K*K + K*L*M*n + K*L*M + n)
    return adds, mults


def hand_HT(K, L, n):
    adds = 5*K*K*L*L*n*n + 10*K*K*L*L*n + 5*K*K*L*L + 5*K*L*n + 5*K*L + 3
    mults = 5*K*K*n*n + 10*K*K*n + 5*K*K + 6*K*L*n + 6*K*L + 1
    return adds, mults


def hand_wk(M, n):
    return (2*M*M*n*n + 4*M*M*n + 2*M*M + M*n + M + 1,
            3*M*M*n*n + 6*M*M*n + 3*M*M + 5*M*n + 5*M + 1)


def hand_ak(M, L, n):
    return (2*n*n + 7*n + 2 + L*M*n + L*M + L*n + L,
            3*n*n + 13*n + 13 + L*M*n + L*M + L*n + L)


def hand_Hk(M, L, n):
    return (2*L*L*n*n + 4*L*L*n + 2*L*L + 5*L*M*n + 5*L*M - 5*n - 2,
            6*L*L*n*n + 12*L*L*n + 6*L*L + L*M*n + L*M + 4*n + 5)


CONFIGS = [(8, 16, 3, 2), (4, 8, 2, 1), (12, 32, 5, 4)]


@pytest.mark.parametrize("K,N,L,n", CONFIGS)
def test_recursions_match_hand_expansion(K, N, L, n):
    M = N + L - 1
    got = recursion_counts(K, N, L, n)
    assert got["W"] == hand_W(K, M, n)
    assert got["a_T"] == hand_aT(K, M, L, n)
    assert got["H_T"] == hand_HT(K, L, n)
    assert got["w_k"] == hand_wk(M, n)
    assert got["a_k"] == hand_ak(M, L, n)
    assert got["H_k"] == hand_Hk(M, L, n)


@pytest.mark.parametrize("K,N,L,n", CONFIGS)
def test_algorithm_totals(K, N, L, n):
    M = N + L - 1

    def total(*parts):
        return tuple(int(sum(p[i] for p in parts)) for i in range(2))

    cfg = dict(K=K, N=N, L=L, n_r=n)
    assert complexity_count("JPAIS-GPC", **cfg) == total(hand_W(K, M, n), hand_aT(K, M, L, n), hand_HT(K, L, n))
    assert complexity_count("JPAIS-IPC", **cfg) == total(hand_wk(M, n), hand_ak(M, L, n), hand_Hk(M, L, n))
    assert complexity_count("CIS-up", **cfg) == hand_W(K, M, n)
    assert complexity_count("CIS-down", **cfg) == hand_wk(M, n)
    assert complexity_count("NCIS-up", **cfg) == hand_W(K, M, 0)
    assert complexity_count("NCIS-down", **cfg) == hand_wk(M, 0)
    ipc_all = complexity_count("JPAIS-IPC", per_user=False, **cfg)
    assert ipc_all == tuple(K * v for v in complexity_count("JPAIS-IPC", **cfg))


def test_ncis_filter_mults():
    K, N, L = 8, 16, 3
    M = N + L - 1
    assert complexity_count("NCIS-up", K=K, N=N, L=L, n_r=3)[1] == 3 * M**2 + 2 * K * M + 3 * M + 1


@pytest.mark.parametrize("alg", ALGORITHMS)
def test_counts_positive_and_monotone_in_relays(alg):
    prev = (0, 0)
    for n_r in range(0, 6):
        adds, mults = complexity_count(alg, K=8, N=16, L=3, n_r=n_r)
        assert adds > 0 and mults > 0
        if not alg.startswith("NCIS"):
            assert adds > prev[0] and mults > prev[1]
        prev = (adds, mults)


def test_overhead_and_unknown_algorithm():
    assert overhead("CIS-up", "CIS-up", K=8) == 0.0
    assert overhead("JPAIS-GPC", "CIS-up", K=8) > 0
    with pytest.raises(ValueError):
        complexity_count("MMSE")


def _metrics(seed_block=0, ber=(0.01, 0.02), sinr=(3.0, 3.0)):
    m = RunMetrics("JPAIS-GPC", "mmse", K=8, n_r=2, snr_db=12.0, seed_block=seed_block, n_p=3, P_packet=1500)
    for b, s in zip(ber, sinr):
        m.add(b, s)
    return m


def test_merge_is_associative_pooling():
    a, b, c = _metrics(0, (0.1,)), _metrics(1, (0.2, 0.3)), _metrics(2, (0.4,))
    left = a.merge(b).merge(c)
    right = a.merge(b.merge(c))
    assert left.ber == right.ber == [0.1, 0.2, 0.3, 0.4]
    assert left.row() == right.row()
    other = RunMetrics("CIS", "mmse", K=8, n_r=2, snr_db=12.0)
    with pytest.raises(ValueError):
        a.merge(other)


def test_row_contents():
    row = _metrics().row()
    assert tuple(row) == CSV_COLUMNS
    assert row["ber"] == pytest.approx(0.015)
    assert row["mi"] == pytest.approx(2.0 / 3)
    assert row["mi_unscaled"] == pytest.approx(2.0)
    assert row["nt"] == pytest.approx((1 - 0.015) ** 3000)
    assert (row["adds"], row["mults"]) == complexity_count("JPAIS-GPC", K=8, N=16, L=3, n_r=2)
    assert row["runs"] == 2


def test_csv_roundtrip_and_missing_column(tmp_path):
    path = tmp_path / "m.csv"
    write_csv(path, [_metrics(), _metrics(1, (0.0,), (1.0,))])
    rows = read_csv(path)
    assert len(rows) == 2
    assert float(rows[0]["ber"]) == _metrics().row()["ber"]
    assert path.read_text(encoding="utf-8").splitlines()[0] == ",".join(CSV_COLUMNS)
    bad = tmp_path / "bad.csv"
    bad.write_text("algorithm,ber\nCIS,0.1\n", encoding="utf-8")
    with pytest.raises(ValueError, match="ber_ci95"):
        read_csv(bad)
