import pytest

from ptxlat import analysis, runner


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """Full synthetic fixture set (all GPUs, O3+O0), shared across tests."""
    out = tmp_path_factory.mktemp("fixtures")
    runner.synthesize_fixtures(out)
    return out


@pytest.fixture(scope="session")
def replayed_records(fixture_dir):
    run = runner.replay_suite(fixture_dir)
    assert not run.failures
    records = []
    for samples in run.samples:
        records.extend(
            analysis.records_from_samples(samples, analysis.RecordSource.REPLAYED)
        )
    records.extend(analysis.derive_div_averages(records))
    return records
