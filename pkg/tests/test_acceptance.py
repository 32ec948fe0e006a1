"""Acceptance suite: the harness's exit criteria, one test per criterion,
each printing a PASS/FAIL line with its stated tolerance pinned.

Criterion 9 needs a CUDA toolchain plus an NVIDIA GPU and is skipped
elsewhere; every other criterion runs at desk scale against the bundled
reference dataset and synthetic fixtures."""

import os
import shutil
import time
from pathlib import Path

import pytest

from ptxlat import analysis, reference as ref, runner, toolchain as tc
from ptxlat.catalog import (
    DESCRIPTORS,
    GENERATED_PROBES,
    InstructionCategory,
    descriptor_for,
)
from ptxlat.ptxgen import codegen
from ptxlat.ptxgen.ast import Instr, Reg
from ptxlat.ptxgen.codegen import defining_sequence
from ptxlat.ptxgen.validator import validate_ptx

GOLDEN_DIR = Path(__file__).parent / "golden"


def _report_line(num, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f"  ({detail})" if detail else ""
    print(f"ACCEPTANCE {num} [{name}]: {status}{suffix}", flush=True)


# -- 1: reference conformance ---------------------------------------------------

def test_criterion_1_reference_conformance(tmp_path):
    """Replaying the synthetic fixtures through runner -> analysis -> report
    reproduces every reference ALU and memory cell exactly (0-cycle
    tolerance), dual Kepler cells and FP16 NA cells included, in < 10 s."""
    t0 = time.monotonic()
    fixtures = tmp_path / "fixtures"
    runner.synthesize_fixtures(fixtures)
    run = runner.replay_suite(fixtures)
    assert not run.failures
    records = []
    for samples in run.samples:
        records.extend(
            analysis.records_from_samples(samples, analysis.RecordSource.REPLAYED)
        )
    records.extend(analysis.derive_div_averages(records))
    conformance = analysis.diff_vs_reference(
        records, tolerance_alu=0, tolerance_memory_frac=0
    )
    elapsed = time.monotonic() - t0

    dual = [r for r in records if r.report_key == "div (regular)" and r.gpu_name in ("K40m", "K80c")
            and r.opt_level == "O3" and r.category is InstructionCategory.FP32]
    dual_values = {r.gpu_name: r.latency_cycles for r in dual}
    fp16_kepler = [
        r for r in records
        if r.category is InstructionCategory.FP16 and r.gpu_name in ("K40m", "K80c", "TITAN X")
    ]

    ok = (
        conformance.fully_exact
        and conformance.total_cells == 618
        and dual_values == {"K40m": 151, "K80c": 150}
        and fp16_kepler == []
        and elapsed < 10.0
    )
    _report_line(
        1,
        "reference conformance",
        ok,
        f"{conformance.exact}/{conformance.total_cells} exact, {elapsed:.2f}s",
    )
    assert conformance.fully_exact, "every reference cell must match exactly"
    assert conformance.total_cells == 618
    assert dual_values == {"K40m": 151, "K80c": 150}, "dual Kepler cells must split by model"
    assert fp16_kepler == [], "NA cells must produce no records"
    assert elapsed < 10.0, f"pipeline took {elapsed:.2f}s, budget is 10s"


# -- 2: average law ---------------------------------------------------------------

def test_criterion_2_average_law():
    """For every division row family with printed regular/irregular values
    ({s} int, {u} int, FP32) and every GPU column, the printed average is
    exactly floor((regular + irregular) / 2)."""
    tables = ref.load_tables()
    failures = []
    checked = 0
    for row in tables.alu_rows:
        if not row.derived_from:
            continue
        sources = []
        for label in row.derived_from:
            try:
                sources.append(tables.find_alu_row(label, row.category))
            except Exception:
                sources = []
                break
        if len(sources) != 2:
            continue  # fp64: regular/irregular not printed
        for opt_class in (ref.OptClass.OPTIMIZED, ref.OptClass.NON_OPTIMIZED):
            for gpu in ref.GPU_ORDER:
                avg = row.cell(gpu, opt_class)
                reg = sources[0].cell(gpu, opt_class)
                irr = sources[1].cell(gpu, opt_class)
                if avg is None:
                    continue
                checked += 1
                if analysis.div_average(reg, irr) != avg:
                    failures.append((row.label, gpu, opt_class, reg, irr, avg))
    spot = (
        analysis.div_average(134, 164) == 149
        and analysis.div_average(123, 280) == 201
    )
    ok = not failures and spot and checked >= 3 * 2 * 7
    _report_line(2, "average law", ok, f"{checked} cells checked")
    assert spot
    assert checked >= 42, "expected {s}, {u}, and FP32 families over all columns"
    assert not failures, f"average law violated: {failures}"


# -- 3: optimization monotonicity ----------------------------------------------------

def test_criterion_3_optimization_monotonicity():
    """optimized <= non-optimized for every cell of the embedded ALU and
    memory tables."""
    tables = ref.load_tables()
    violations = []
    checked = 0
    for row in tables.alu_rows:
        for gpu in ref.GPU_ORDER:
            opt, non = row.optimized[gpu], row.non_optimized[gpu]
            if opt is None:
                continue
            checked += 1
            if opt > non:
                violations.append((f"{row.category.key}: {row.label}", gpu, opt, non))
    for row in tables.memory_rows:
        for gpu, opt in row.optimized.items():
            checked += 1
            if opt > row.non_optimized[gpu]:
                violations.append((row.label, gpu, opt, row.non_optimized[gpu]))
    _report_line(
        3,
        "optimization monotonicity",
        not violations,
        f"{checked} cells checked, {len(violations)} violations",
    )
    assert not violations, (
        "optimized latency exceeds non-optimized in the published data for: "
        + "; ".join(f"{label} on {gpu}: {opt} > {non}" for label, gpu, opt, non in violations)
    )


# -- 4: cross-table consistency ---------------------------------------------------------

def test_criterion_4_cuda_version_cross_consistency():
    """Every CUDA-9.0 value of the compiler-version table equals the Volta
    optimized cell of the ALU table for the same instruction."""
    tables = ref.load_tables()
    expected_v9 = {
        ("int_intrinsic", "mul64hi()"): 123,
        ("int_intrinsic", "popc()"): 15,
        ("int_intrinsic", "bfind() / bbrev()"): 15,
        ("fp32", "div (regular)"): 123,
        ("fp32", "div (irregular)"): 280,
        ("fp32", "div (average)"): 201,
        ("fp64", "div"): 159,
    }
    mismatches = []
    for row in tables.cuda_rows:
        alu_row = tables.find_alu_row(row.alu_label, row.category)
        volta = alu_row.optimized["V100"]
        if volta != row.v9:
            mismatches.append((row.label, row.v9, volta))
        pinned = expected_v9[(row.category.key, row.label)]
        assert row.v9 == pinned, (row.label, row.v9, pinned)
    ok = not mismatches and len(tables.cuda_rows) == 7
    _report_line(4, "cross-table consistency", ok, f"{len(tables.cuda_rows)} rows")
    assert not mismatches, f"CUDA-9.0 values diverge from Volta optimized cells: {mismatches}"


# -- 5: codegen structural suite ------------------------------------------------------

def test_criterion_5_codegen_structural_suite():
    """100% of catalog descriptors and probe kinds emit PTX that
    self-validates with zero diagnostics; ALU sandwiches hold exactly the
    defining sequence; the global-memory kernel has two timing blocks with
    distinct same-line addresses; barriers bracket every block. < 30 s."""
    t0 = time.monotonic()
    problems = []

    def barriers_ok(module):
        body = module.ast.kernel.body
        for block in module.timing_blocks:
            i_start = next(
                i for i, ins in enumerate(body)
                if ins.operands and ins.operands[0] == Reg(block.start_clock_reg)
            )
            i_end = next(
                i for i, ins in enumerate(body)
                if ins.operands and ins.operands[0] == Reg(block.end_clock_reg)
            )
            if body[i_start - 2].opcode != "membar.gl" or body[i_start - 1].base != "bar":
                return False
            if body[i_end + 1].opcode != "membar.gl" or body[i_end + 2].base != "bar":
                return False
        return True

    modules = []
    for desc in DESCRIPTORS:
        arch = "sm_60" if desc.min_compute_capability > 3.5 else "sm_35"
        for target in {arch, "sm_70"}:
            modules.append(codegen.emit_alu_kernel(desc, arch=target))
    for kind in GENERATED_PROBES:
        modules.append(codegen.emit_probe_kernel(kind))

    for module in modules:
        diags = validate_ptx(module)
        if diags:
            problems.append((module.kernel_id, [str(d) for d in diags[:2]]))
            continue
        if not barriers_ok(module):
            problems.append((module.kernel_id, "barriers"))
        if module.descriptor is not None:
            (block,) = module.timing_blocks
            want = list(defining_sequence(module.descriptor))
            got = [i.opcode for i in block.timed_instructions]
            if got != want:
                problems.append((module.kernel_id, f"sandwich {got} != {want}"))

    gm = codegen.emit_global_memory_kernel()
    first, second = (b.timed_instructions[0].operands[1] for b in gm.timing_blocks)
    if len(gm.timing_blocks) != 2:
        problems.append(("global", "block count"))
    if not (first.base == second.base and 0 < abs(second.offset - first.offset) < 32):
        problems.append(("global", "addresses not distinct words of one line"))

    elapsed = time.monotonic() - t0
    ok = not problems and elapsed < 30.0
    _report_line(
        5,
        "codegen structural suite",
        ok,
        f"{len(modules)} modules validated, {elapsed:.2f}s",
    )
    assert not problems, problems
    assert elapsed < 30.0


# -- 6: mutation detection ---------------------------------------------------------------

def test_criterion_6_mutation_detection():
    """AST-level mutants (swapped clock reads, removed dummy dependence,
    removed barrier) each trigger at least one validator diagnostic."""

    def swapped_clock_reads():
        m = codegen.emit_alu_kernel(descriptor_for("add", "u32"))
        body = m.ast.kernel.body
        block = m.timing_blocks[0]
        i = next(j for j, ins in enumerate(body)
                 if ins.operands and ins.operands[0] == Reg(block.start_clock_reg))
        k = next(j for j, ins in enumerate(body)
                 if ins.operands and ins.operands[0] == Reg(block.end_clock_reg))
        body[i], body[k] = body[k], body[i]
        return m

    def removed_dummy_dependence():
        m = codegen.emit_alu_kernel(descriptor_for("add", "u32"))
        body = m.ast.kernel.body
        block = m.timing_blocks[0]
        dest = block.timed_instructions[0].operands[0]
        source = block.timed_instructions[0].operands[1]
        i = next(j for j, ins in enumerate(body)
                 if ins.opcode == "add.u32" and ins is not block.timed_instructions[0]
                 and dest in ins.operands[1:])
        body[i] = Instr(body[i].opcode, (body[i].operands[0], source, source))
        return m

    def removed_barrier():
        m = codegen.emit_alu_kernel(descriptor_for("add", "u32"))
        body = m.ast.kernel.body
        block = m.timing_blocks[0]
        i_end = next(j for j, ins in enumerate(body)
                     if ins.operands and ins.operands[0] == Reg(block.end_clock_reg))
        del body[i_end + 1]  # membar.gl
        return m

    mutants = {
        "swapped clock reads": swapped_clock_reads,
        "removed dummy dependence": removed_dummy_dependence,
        "removed barrier": removed_barrier,
    }
    undetected = []
    for name, build in mutants.items():
        diags = validate_ptx(codegen.remake_text(build()))
        if not diags:
            undetected.append(name)
    _report_line(6, "mutation detection", not undetected, f"{len(mutants)} mutants")
    assert not undetected, f"validator missed mutants: {undetected}"


# -- 7: golden pipeline transcripts ---------------------------------------------------------

def test_criterion_7_golden_transcripts():
    """Dry-run plans for (O0, O3) x (L1 on/off) x (sm_35, sm_70) match the
    checked-in command sequences byte for byte."""
    mismatches = []
    for arch in ("sm_35", "sm_70"):
        module = codegen.emit_global_memory_kernel(arch=arch)
        for opt in ("O0", "O3"):
            for l1, tag in ((tc.L1_ENABLED, "l1on"), (tc.L1_DISABLED, "l1off")):
                plan = tc.plan_compilation(
                    module, tc.BuildConfig(opt_level=opt, l1_mode=l1, target_arch=arch)
                )
                result = tc.execute_plan(plan, "dry_run")
                golden = (GOLDEN_DIR / f"transcript_{arch}_{opt}_{tag}.txt").read_bytes()
                if result.transcript.encode() != golden:
                    mismatches.append((arch, opt, tag))
    _report_line(7, "golden pipeline transcripts", not mismatches, "8 configurations")
    assert not mismatches, mismatches


# -- 8: analysis properties --------------------------------------------------------------------

def test_criterion_8_analysis_properties():
    """Subtraction identity, zero clamping with anomaly flag, aggregation
    scale-freeness, and the power-of-two classifier against the brute-force
    oracle on 1..2^20."""
    for a in list(range(0, 2000, 7)) + [2**30]:
        for overhead in (0, 1, 14, 1000):
            assert analysis.net_latency(a + overhead, overhead) == (a, False)

    assert analysis.net_latency(10, 14) == (0, True)
    assert analysis.net_latency(0, 1) == (0, True)
    assert analysis.net_latency(5, 5) == (0, False)

    cycles = [23, 23, 24, 26, 23, 23, 30, 23, 23, 23, 23]
    base = analysis.aggregate(
        _mk_samples(cycles), overhead=14
    )
    for c in (1, 5, 99):
        shifted = analysis.aggregate(
            _mk_samples([v + c for v in cycles]), overhead=14 + c
        )
        assert shifted.latency_cycles == base.latency_cycles
        assert shifted.dispersion == base.dispersion

    powers = {1 << k for k in range(21)}
    mism = 0
    for d in range(1, 2**20 + 1):
        expected = d in powers
        got = analysis.classify_divisor(d) is analysis.DivVariant.REGULAR
        if got != expected:
            mism += 1
    _report_line(8, "analysis properties", mism == 0, "classifier swept 1..2^20")
    assert mism == 0


def _mk_samples(cycles):
    return runner.RawSamples(
        kernel_id="int_arith__add__u32",
        gpu_name="K40m",
        toolchain_version="9.0",
        opt_level="O3",
        clock_overhead_samples=[14] * len(cycles),
        outputs={"cycles": list(cycles)},
    )


# -- 9: hardware end-to-end (conditional) ---------------------------------------------------------

def _gpu_present() -> bool:
    if os.path.exists("/dev/nvidia0"):
        return True
    smi = shutil.which("nvidia-smi")
    if not smi:
        return False
    import subprocess

    try:
        return subprocess.run([smi, "-L"], capture_output=True, timeout=20).returncode == 0
    except OSError:
        return False


_hw = tc.detect_toolchain()

requires_cuda_gpu = pytest.mark.skipif(
    not (_hw.available and _gpu_present()),
    reason="needs the CUDA toolchain and an NVIDIA GPU",
)


@requires_cuda_gpu
def test_criterion_9_hardware_int_arith_ordinal(tmp_path):
    """On real hardware, the integer-arithmetic suite completes end to end
    and add/sub latency is below div latency at every optimization level
    (ordinal check only; absolute cycles are hardware-specific)."""
    arch = "sm_70"
    work = tmp_path / "build"
    work.mkdir()
    suite = [
        descriptor_for("add", "u32"),
        descriptor_for("sub", "u32"),
        descriptor_for("div", "s32", "regular"),
        descriptor_for("div", "s32", "irregular"),
    ]
    modules = [codegen.emit_alu_kernel(d, arch=arch) for d in suite]
    modules.append(codegen.emit_clock_overhead_kernel(arch=arch))

    results = {}
    for opt in ("O0", "O3"):
        executables = {}
        for module in modules:
            (work / f"{module.kernel_id}.ptx").write_text(module.text)
            (work / f"{module.kernel_id}_host.cu").write_text(tc.emit_host_launcher(module))
            cfg = tc.BuildConfig(opt_level=opt, target_arch=arch, toolchain_version=_hw.version or "")
            plan = tc.plan_compilation(module, cfg, work_dir=str(work))
            built = tc.execute_plan(plan, "real")
            executables[module.kernel_id] = built.artifact
        clock_bin = executables["probe__clock_overhead"]
        refs = [
            runner.KernelRef(
                kernel_id=d.kernel_id,
                executable=executables[d.kernel_id],
                clock_executable=clock_bin,
                gpu_name="local",
                opt_level=opt,
                toolchain_version=_hw.version or "",
            )
            for d in suite
        ]
        run = runner.run_measurement(refs, runner.HardwareBackend())
        assert not run.failures, [str(f) for f in run.failures]
        for samples in run.samples:
            for rec in analysis.records_from_samples(samples, analysis.RecordSource.MEASURED):
                results[(samples.kernel_id, opt)] = rec.latency_cycles

    ok = True
    for opt in ("O0", "O3"):
        fast = max(results[("int_arith__add__u32", opt)], results[("int_arith__sub__u32", opt)])
        slow = min(
            results[("int_arith__div__s32__regular", opt)],
            results[("int_arith__div__s32__irregular", opt)],
        )
        ok = ok and fast < slow
    _report_line(9, "hardware ordinal check", ok, str(results))
    assert ok, results
