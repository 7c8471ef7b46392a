import pytest

from arf_forge.forge import ForgeConfig, generate_benchmark

# Small series keep the suite fast; the 40% mid-band mass is preserved.
FAST_SYNTH = {
    "length_segments": [[240, 999, 0.6], [1000, 2500, 0.4]],
    "variate_range": [1, 8],
}


def fast_config(seed: int = 11, total: int = 48) -> ForgeConfig:
    return ForgeConfig.from_dict(
        {"seed": seed, "total_questions": total, "synth": dict(FAST_SYNTH)}
    )


@pytest.fixture(scope="session")
def bench(tmp_path_factory):
    """One shared small benchmark for read-only tests."""
    root = tmp_path_factory.mktemp("bench")
    return generate_benchmark(fast_config(), str(root / "b"))


@pytest.fixture(scope="session")
def bench_questions(bench):
    return bench.questions()
