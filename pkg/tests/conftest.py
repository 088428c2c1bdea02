"""Shared fixtures: deterministic corpora with designed profile geometry.

The "designed" profiles place the nine referenced speakers on orthogonal
basis directions and give each unreferenced speaker a distinct affinity
(cosine 0.3) to exactly one referenced speaker, so the open-set margin is
decisive under either unknown rule. All pairwise angles are >= 60 deg and
every component is non-negative.
"""

import math

import numpy as np
import pytest

from rdsv.ral import RalConfig, build_ral
from rdsv.synthetic import CorpusConfig, SpeakerProfile, gen_case


def designed_profiles(dim=256, kappa=math.inf, n_judges=9, n_guests=3):
    profiles = []
    for i in range(n_judges):
        direction = np.zeros(dim)
        direction[i] = 1.0
        profiles.append(SpeakerProfile(f"judge{i:02d}", direction, kappa))
    lean = 0.3
    for k in range(n_guests):
        direction = np.zeros(dim)
        direction[n_judges + k] = math.sqrt(1.0 - lean * lean)
        direction[k % n_judges] = lean
        profiles.append(SpeakerProfile(f"guest{k:02d}", direction, kappa))
    return profiles


def make_corpus(seed=1, kappa=math.inf, cases=5, case_duration_s=240.0, rate=5.0):
    cfg = CorpusConfig(
        n_speakers=12,
        n_referenced=9,
        dim=256,
        rate=rate,
        cases=cases,
        case_duration_s=case_duration_s,
        seed=seed,
        kappa=kappa,
        min_pairwise_angle_deg=60.0,
    )
    profiles = designed_profiles(kappa=kappa)
    pairs = [gen_case(cfg, profiles, i) for i in range(cfg.cases)]
    return cfg, profiles, pairs


@pytest.fixture(scope="session")
def zero_noise_corpus():
    return make_corpus(seed=1, kappa=math.inf)


@pytest.fixture(scope="session")
def zero_noise_library(zero_noise_corpus):
    _, profiles, pairs = zero_noise_corpus
    judges = frozenset(p.name for p in profiles[:9])
    return build_ral(pairs, RalConfig(allowlist=judges))
