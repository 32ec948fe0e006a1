import pytest

from ptxlat.catalog import InstructionCategory, MemoryProbeKind
from ptxlat.errors import NotApplicable, NotInTable, SchemaError
from ptxlat.reference import GPU_ORDER, OptClass, ReferenceTables, load_tables


@pytest.fixture(scope="module")
def tables():
    return load_tables()


def test_load_is_cached_singleton():
    assert load_tables() is load_tables()


def test_unknown_schema_version_rejected():
    with pytest.raises(SchemaError):
        ReferenceTables({"schema_version": 99})


def test_seven_gpu_models(tables):
    assert [g.name for g in tables.gpus()] == list(GPU_ORDER)


def test_gpu_configuration_fields(tables):
    k40m = tables.gpu("K40m")
    assert (k40m.architecture, k40m.chip) == ("Kepler", "GK110B")
    assert k40m.compute_capability == 3.5
    assert k40m.gpu_clock_mhz == 745
    assert k40m.mem_clock_mhz == 1502
    assert k40m.mem_bandwidth_gbs == 288.4
    assert k40m.l1_size_kb == 16
    assert k40m.l2_size_kb == 1536
    assert (k40m.cores_total, k40m.smx_count) == (2880, 15)
    assert (k40m.per_smx.sp, k40m.per_smx.dp, k40m.per_smx.sfu) == (192, 64, 32)
    assert k40m.per_smx.ldst == 32

    v100 = tables.gpu("V100")
    assert (v100.architecture, v100.compute_capability) == ("Volta", 7.0)
    assert v100.mem_type == "HBM2"
    assert v100.mem_bus_bits == 4096
    assert v100.l1_size_kb == 128
    assert (v100.cores_total, v100.smx_count) == (5120, 80)

    rtx = tables.gpu("TITAN RTX")
    assert (rtx.architecture, rtx.chip, rtx.compute_capability) == ("Turing", "TU102", 7.5)
    assert rtx.mem_bandwidth_gbs == 672.0
    assert rtx.mem_size_gb == 24

    titan_x = tables.gpu("TITAN X")
    assert (titan_x.architecture, titan_x.compute_capability) == ("Maxwell", 5.2)
    assert titan_x.gpu_clock_mhz == 1000

    p100 = tables.gpu("P100")
    assert (p100.architecture, p100.compute_capability) == ("Pascal", 6.0)
    assert p100.mem_clock_mhz == 715


def test_compute_capability_consistent_with_architecture(tables):
    majors = {"Kepler": 3, "Maxwell": 5, "Pascal": 6, "Volta": 7, "Turing": 7}
    for g in tables.gpus():
        assert int(g.compute_capability) == majors[g.architecture]


def test_lookup_int_add(tables):
    assert tables.lookup("V100", "add/sub/min/max [int]", OptClass.OPTIMIZED) == 4
    assert tables.lookup("K40m", "add / sub / min / max [int]", OptClass.OPTIMIZED) == 9
    assert tables.lookup("K40m", "add / sub / min / max [int]", OptClass.NON_OPTIMIZED) == 16


def test_lookup_dual_kepler_cells(tables):
    assert tables.lookup("K80c", "div (irregular) [f32]", OptClass.OPTIMIZED) == 479
    assert tables.lookup("K40m", "div (irregular) [f32]", OptClass.OPTIMIZED) == 686
    assert tables.lookup("K40m", "div (regular) [f32]", OptClass.OPTIMIZED) == 151
    assert tables.lookup("K80c", "div (regular) [f32]", OptClass.OPTIMIZED) == 150


def test_lookup_na_cell(tables):
    with pytest.raises(NotApplicable):
        tables.lookup("K40m", "fma [f16]", OptClass.OPTIMIZED)


def test_lookup_unknown_row(tables):
    with pytest.raises(NotInTable):
        tables.lookup("K40m", "frobnicate [int]", OptClass.OPTIMIZED)
    with pytest.raises(NotInTable):
        tables.lookup("K40m", "add / sub / min / max", OptClass.OPTIMIZED)  # ambiguous


def test_volta_models_share_column(tables):
    for row in tables.alu_rows:
        assert row.optimized["TITAN V"] == row.optimized["V100"]
        assert row.non_optimized["TITAN V"] == row.non_optimized["V100"]


def test_na_exactly_fp16_on_kepler_maxwell(tables):
    for row in tables.alu_rows:
        for side in (row.optimized, row.non_optimized):
            for gpu, value in side.items():
                if value is None:
                    assert row.category is InstructionCategory.FP16
                    assert gpu in ("K40m", "K80c", "TITAN X")


def test_lookup_memory(tables):
    assert tables.lookup_memory("V100", MemoryProbeKind.SHARED_MEMORY, OptClass.OPTIMIZED) == 18
    assert (
        tables.lookup_memory("TITAN X", MemoryProbeKind.CONSTANT_MEMORY, OptClass.NON_OPTIMIZED)
        == 145
    )


def test_lookup_memory_global_not_tabulated(tables):
    with pytest.raises(NotInTable):
        tables.lookup_memory("P100", MemoryProbeKind.GLOBAL_MEMORY, OptClass.OPTIMIZED)


def test_lookup_cuda_delta(tables):
    assert tables.lookup_cuda_delta("popc()") == (15, 5)
    assert tables.lookup_cuda_delta("div f64") == (159, 135)
    assert tables.lookup_cuda_delta("mul64hi()") == (123, 85)
    with pytest.raises(NotInTable):
        tables.lookup_cuda_delta("add u32")


def test_cuda_v9_matches_volta_optimized_column(tables):
    for row in tables.cuda_rows:
        ref_row = tables.find_alu_row(row.alu_label, row.category)
        assert ref_row.optimized["V100"] == row.v9, row.label


def test_average_rows_marked_derived(tables):
    for row in tables.alu_rows:
        assert ("(average)" in row.label) == (row.derived_from is not None)
