"""Command-line front end tying the pipeline together.

Exit codes: 0 success, 2 configuration error, 3 partial measurement
failure, 4 conformance failure.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import click

from . import analysis, reference as ref, report as report_mod, runner as runner_mod
from . import toolchain as tc
from .catalog import (
    GENERATED_PROBES,
    InstructionCategory,
    MemoryProbeKind,
    list_instructions,
)
from .errors import PtxLatError, StepFailed, ToolNotFound, UnsupportedConfig
from .ptxgen import codegen
from .ptxgen.validator import validate_ptx

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3
EXIT_CONFORMANCE = 4


@dataclass
class RunManifest:
    """Resolved run configuration: which kernels, which build matrix, which
    backend, where outputs go."""

    gpu: Optional[ref.GpuTarget] = None
    arch: str = codegen.DEFAULT_ARCH
    opt_levels: tuple[str, ...] = ("O3", "O0")
    suite: tuple = ()
    probes: tuple = GENERATED_PROBES
    backend: str = "replay"
    output_dir: Path = Path("out")

    def validate(self):
        cc = int(self.arch.removeprefix("sm_")) / 10.0
        for d in self.suite:
            if d.min_compute_capability > cc:
                raise UnsupportedConfig(
                    f"{d.kernel_id} unrealizable on {self.arch}; narrow the suite "
                    "or raise --arch"
                )


def _category(name: Optional[str]) -> Optional[InstructionCategory]:
    if name is None:
        return None
    try:
        return InstructionCategory.from_key(name)
    except KeyError:
        raise click.UsageError(
            f"unknown category {name!r}; one of "
            + ", ".join(c.key for c in InstructionCategory)
        )


def _emit_all(suite, probes, arch):
    """(kernel_id, module) pairs for a suite of descriptors plus probes."""
    modules = []
    for desc in suite:
        modules.append(codegen.emit_alu_kernel(desc, arch=arch))
    for kind in probes:
        modules.append(codegen.emit_probe_kernel(kind, arch=arch))
    return modules


def _records_from_run(run, source) -> list[analysis.LatencyRecord]:
    records: list[analysis.LatencyRecord] = []
    for samples in run.samples:
        records.extend(analysis.records_from_samples(samples, source))
    records.extend(analysis.derive_div_averages(records))
    return records


def _load_records(path: str) -> list[analysis.LatencyRecord]:
    rows = json.loads(Path(path).read_text())
    out = []
    for row in rows:
        out.append(
            analysis.LatencyRecord(
                report_key=row["report_key"],
                gpu_name=row["gpu"],
                opt_level=row["opt_level"],
                toolchain_version=row["toolchain"],
                latency_cycles=row["latency_cycles"],
                dispersion=analysis.Dispersion(row["min"], row["max"], row["n"]),
                derived_from=analysis.RecordSource(row["source"]),
                category=InstructionCategory.from_key(row["category"])
                if row.get("category")
                else None,
                instruction=row.get("instruction"),
                data_type=row.get("dtype"),
                variant=row.get("variant"),
                probe=MemoryProbeKind(row["probe"]) if row.get("probe") else None,
                kernel_id=row.get("kernel_id"),
                anomalous=row.get("anomalous", False),
            )
        )
    return out


def _read_config_defaults(ctx, param, value):
    """--config FILE: TOML whose per-command tables provide flag defaults,
    e.g. [build] opt = "O0" or [measure] fixtures = "fx". Keys are the
    long option names."""
    if not value:
        return None
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    with open(value, "rb") as f:
        doc = tomllib.load(f)
    default_map = {}
    for cmd_name, table in doc.items():
        if not isinstance(table, dict):
            continue
        cmd = main.commands.get(cmd_name)
        resolved = {}
        for key, default in table.items():
            name = key
            if cmd is not None:
                for p in cmd.params:
                    if key == p.name or f"--{key}" in p.opts:
                        name = p.name
                        break
            resolved[name] = default
        default_map[cmd_name] = resolved
    ctx.default_map = default_map
    return value


@click.group()
@click.version_option()
@click.option(
    "--config",
    type=click.Path(exists=True, dir_okay=False),
    callback=_read_config_defaults,
    expose_value=False,
    is_eager=True,
    help="TOML file with per-command flag defaults.",
)
def main():
    """Clock-sandwich PTX microbenchmarks for GPU instruction latency."""


# -- list -------------------------------------------------------------------

@main.command("list")
@click.option("--category", default=None, help="Restrict to one category key.")
@click.option("--gpu", "gpu_name", default=None, help="Filter by GPU capability.")
@click.option("--format", "fmt", type=click.Choice(["table", "json"]), default="table")
def cmd_list(category, gpu_name, fmt):
    """Print the instruction catalog."""
    gpu = ref.load_tables().gpu(gpu_name) if gpu_name else None
    rows = list_instructions(_category(category), gpu)
    if fmt == "json":
        payload = [
            {
                "mnemonic": d.mnemonic,
                "category": d.category.key,
                "data_type": d.data_type.value,
                "signedness": d.signedness.value,
                "div_variant": d.div_variant.value if d.div_variant else None,
                "operand_arity": d.operand_arity,
                "is_intrinsic": d.is_intrinsic,
                "min_compute_capability": d.min_compute_capability,
                "report_group": d.report_group,
                "kernel_id": d.kernel_id,
            }
            for d in rows
        ]
        click.echo(json.dumps(payload, indent=1))
        return
    click.echo(f"{'kernel id':40} {'category':16} {'arity':5} {'cc':4} report group")
    for d in rows:
        click.echo(
            f"{d.kernel_id:40} {d.category.key:16} {d.operand_arity:<5} "
            f"{d.min_compute_capability:<4} {d.report_group}"
        )


# -- generate ----------------------------------------------------------------

@main.command("generate")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--arch", default=codegen.DEFAULT_ARCH, show_default=True)
@click.option("--category", default=None)
@click.option("--probes/--no-probes", default=True, show_default=True)
def cmd_generate(out_dir, arch, category, probes):
    """Write one .ptx file per kernel plus a manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suite = list_instructions(_category(category))
    cc = int(arch.removeprefix("sm_")) / 10.0
    suite = [d for d in suite if d.min_compute_capability <= cc]
    modules = _emit_all(suite, GENERATED_PROBES if probes else (), arch)

    manifest = []
    for module in modules:
        diags = validate_ptx(module)
        if diags:
            raise click.ClickException(
                f"{module.kernel_id}: generator produced invalid PTX: {diags[0]}"
            )
        path = out / f"{module.kernel_id}.ptx"
        path.write_text(module.text)
        entry = {
            "kernel_id": module.kernel_id,
            "file": path.name,
            "entry": module.entry_name,
            "kind": module.kind.value,
            "arch": module.target_arch,
            "outputs": [p.output_name for p in module.output_params],
        }
        if module.descriptor is not None:
            d = module.descriptor
            entry["descriptor"] = {
                "mnemonic": d.mnemonic,
                "category": d.category.key,
                "data_type": d.data_type.value,
                "div_variant": d.div_variant.value if d.div_variant else None,
                "report_group": d.report_group,
            }
        manifest.append(entry)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    click.echo(f"wrote {len(modules)} kernels + manifest.json to {out}")


# -- build -------------------------------------------------------------------

@main.command("build")
@click.option("--ptx", "ptx_dir", required=True, type=click.Path(exists=True))
@click.option("--opt", default="O3", type=click.Choice(tc.OPT_LEVELS), show_default=True)
@click.option("--arch", default=codegen.DEFAULT_ARCH, show_default=True)
@click.option(
    "--l1",
    default="na",
    type=click.Choice(["on", "off", "na"]),
    help="L1 cache mode for global-memory probe builds.",
)
@click.option("--dry-run/--run", default=True, show_default=True)
@click.option("--out", "work_dir", default="build", show_default=True)
@click.option("--templates", "templates_path", default=None, type=click.Path(exists=True))
def cmd_build(ptx_dir, opt, arch, l1, dry_run, work_dir, templates_path):
    """Plan (and optionally run) the compile pipeline for generated kernels."""
    manifest_path = Path(ptx_dir) / "manifest.json"
    if not manifest_path.is_file():
        raise click.UsageError(f"{ptx_dir} has no manifest.json; run generate first")
    manifest = json.loads(manifest_path.read_text())
    l1_mode = {"on": tc.L1_ENABLED, "off": tc.L1_DISABLED, "na": tc.L1_NA}[l1]

    info = tc.detect_toolchain()
    if not dry_run and not info.available:
        click.echo(
            "error: CUDA toolchain not found (ptxas/nvcc missing). "
            "Use --dry-run to inspect plans or `ptxlat replay` for fixtures.",
            err=True,
        )
        sys.exit(EXIT_CONFIG)

    templates = tc.load_templates(templates_path, info.version)
    mode = "dry_run" if dry_run else "real"
    failures = 0
    for entry in manifest:
        if l1_mode != tc.L1_NA and entry["kind"] != "global_memory":
            continue
        module = _rehydrate_module(Path(ptx_dir), entry)
        cfg = tc.BuildConfig(
            opt_level=opt,
            l1_mode=l1_mode if entry["kind"] == "global_memory" else tc.L1_NA,
            target_arch=arch,
            toolchain_version=info.version or "",
        )
        try:
            plan = tc.plan_compilation(module, cfg, templates, work_dir)
        except UnsupportedConfig as e:
            click.echo(f"skip {entry['kernel_id']}: {e}", err=True)
            continue
        if not dry_run:
            Path(work_dir).mkdir(parents=True, exist_ok=True)
            (Path(work_dir) / f"{module.kernel_id}.ptx").write_text(module.text)
            (Path(work_dir) / f"{module.kernel_id}_host.cu").write_text(
                tc.emit_host_launcher(module)
            )
        try:
            result = tc.execute_plan(plan, mode)
        except (ToolNotFound, StepFailed) as e:
            click.echo(f"FAILED {entry['kernel_id']}: {e}", err=True)
            failures += 1
            continue
        click.echo(f"# {plan.kernel_id} [{mode}]")
        click.echo(result.transcript, nl=False)
    if failures:
        sys.exit(EXIT_PARTIAL)


def _rehydrate_module(ptx_dir: Path, entry: dict) -> codegen.PtxModule:
    """Re-emit the module for a manifest entry (plans need metadata, not
    just text)."""
    arch = entry["arch"]
    if "descriptor" in entry:
        d = entry["descriptor"]
        from .catalog import descriptor_for

        desc = descriptor_for(d["mnemonic"], d["data_type"], d.get("div_variant"))
        return codegen.emit_alu_kernel(desc, arch=arch)
    return codegen.emit_probe_kernel(MemoryProbeKind(entry["kind"]), arch=arch)


# -- fixtures ------------------------------------------------------------------

@main.command("fixtures")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--gpu", "gpu_names", multiple=True, help="Default: all seven models.")
@click.option("--reps", default=runner_mod.DEFAULT_REPETITIONS, show_default=True)
def cmd_fixtures(out_dir, gpu_names, reps):
    """Materialize the synthetic fixture set from the reference tables."""
    written = runner_mod.synthesize_fixtures(
        out_dir, gpus=list(gpu_names) or None, reps=reps
    )
    click.echo(f"wrote {len(written)} fixtures to {out_dir}")


# -- calibrate -----------------------------------------------------------------

@main.command("calibrate")
@click.option("--fixtures", "fixtures_dir", required=True, type=click.Path(exists=True))
@click.option("--gpu", "gpu_name", default=None)
def cmd_calibrate(fixtures_dir, gpu_name):
    """Report clock-read calibration overheads present in a fixture set."""
    run = runner_mod.replay_suite(fixtures_dir)
    seen = {}
    for samples in run.samples:
        if gpu_name and samples.gpu_name != gpu_name:
            continue
        if not samples.clock_overhead_samples:
            continue
        key = (samples.gpu_name, samples.opt_level)
        seen.setdefault(key, analysis.clock_overhead(samples.clock_overhead_samples))
    if not seen:
        raise click.ClickException("no calibration samples found")
    click.echo(f"{'gpu':12} {'opt':4} overhead_cycles")
    for (gpu, opt), overhead in sorted(seen.items()):
        click.echo(f"{gpu:12} {opt:4} {overhead}")


# -- measure -------------------------------------------------------------------

@main.command("measure")
@click.option("--backend", type=click.Choice(["hw", "replay"]), required=True)
@click.option("--fixtures", "fixtures_dir", default=None, type=click.Path(exists=True))
@click.option("--bin-dir", default=None, type=click.Path(exists=True),
              help="Directory of built measurement executables (hw backend).")
@click.option("--gpu", "gpu_name", default="", help="GPU label for the records.")
@click.option("--opt", default="O3", type=click.Choice(tc.OPT_LEVELS), show_default=True)
@click.option("--category", default=None)
@click.option("--reps", default=runner_mod.DEFAULT_REPETITIONS, show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False))
def cmd_measure(backend, fixtures_dir, bin_dir, gpu_name, opt, category, reps, out_path):
    """Collect raw samples and reduce them to latency records (JSON)."""
    launch = runner_mod.LaunchConfig(repetitions=reps)
    if backend == "replay":
        if not fixtures_dir:
            raise click.UsageError("replay backend needs --fixtures DIR")
        run = runner_mod.replay_suite(fixtures_dir, launch)
        source = analysis.RecordSource.REPLAYED
    else:
        info = tc.detect_toolchain()
        if not info.available:
            click.echo(
                "error: hardware backend needs the CUDA toolchain, which was not "
                "found; inspect plans with `ptxlat build --dry-run` or replay "
                "recorded fixtures with `--backend replay --fixtures DIR`.",
                err=True,
            )
            sys.exit(EXIT_CONFIG)
        if not bin_dir:
            raise click.UsageError("hw backend needs --bin-dir with built executables")
        suite = _hw_suite(Path(bin_dir), _category(category), gpu_name, opt, info)
        run = runner_mod.run_measurement(suite, runner_mod.HardwareBackend(), launch)
        source = analysis.RecordSource.MEASURED

    records = _records_from_run(run, source)
    payload = report_mod.render_json(records)
    if out_path:
        Path(out_path).write_text(payload)
        click.echo(f"wrote {len(records)} records to {out_path}")
    else:
        click.echo(payload, nl=False)
    for failure in run.failures:
        click.echo(f"FAILED {failure.kernel_id}: {failure.detail}", err=True)
    if run.failures:
        sys.exit(EXIT_PARTIAL)


def _hw_suite(bin_dir: Path, category, gpu_name, opt, info) -> list[runner_mod.KernelRef]:
    clock_bin = None
    candidates = sorted(bin_dir.glob("*_bench"))
    for p in candidates:
        if p.name.startswith("probe__clock_overhead"):
            clock_bin = str(p)
    suite = []
    for p in candidates:
        kernel_id = p.name.removesuffix("_bench")
        if kernel_id.startswith("probe__clock_overhead"):
            continue
        if category is not None and not kernel_id.startswith(category.key + "__"):
            continue
        suite.append(
            runner_mod.KernelRef(
                kernel_id=kernel_id,
                executable=str(p),
                clock_executable=clock_bin,
                gpu_name=gpu_name,
                opt_level=opt,
                toolchain_version=info.version or "",
            )
        )
    return suite


# -- replay / report / diff ----------------------------------------------------

@main.command("replay")
@click.option("--fixtures", "fixtures_dir", required=True, type=click.Path(exists=True))
@click.option("--report", "fmt", type=click.Choice(["md", "csv", "json"]), default="md")
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False))
def cmd_replay(fixtures_dir, fmt, out_path):
    """Replay fixtures through the analysis pipeline and render a report."""
    run = runner_mod.replay_suite(fixtures_dir)
    records = _records_from_run(run, analysis.RecordSource.REPLAYED)
    text = report_mod.render(records, fmt)
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"wrote report to {out_path}")
    else:
        click.echo(text, nl=False)
    if run.failures:
        for failure in run.failures:
            click.echo(f"FAILED {failure.kernel_id}: {failure.detail}", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command("report")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["md", "csv", "json"]), default="md")
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False))
def cmd_report(records_path, fmt, out_path):
    """Render previously measured records."""
    records = _load_records(records_path)
    text = report_mod.render(records, fmt)
    if out_path:
        Path(out_path).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command("diff")
@click.option("--records", "records_path", default=None, type=click.Path(exists=True))
@click.option("--fixtures", "fixtures_dir", default=None, type=click.Path(exists=True))
@click.option("--against", default="reference", show_default=True,
              type=click.Choice(["reference"]))
@click.option("--tolerance", default=analysis.DEFAULT_ALU_TOLERANCE, show_default=True,
              help="ALU tolerance in cycles.")
@click.option("--tolerance-mem", default=analysis.DEFAULT_MEMORY_TOLERANCE_FRAC,
              show_default=True, help="Relative tolerance for memory probes.")
@click.option("--threshold", default=100.0, show_default=True,
              help="Minimum conformance percentage for exit code 0.")
@click.option("--verbose/--quiet", default=False)
def cmd_diff(records_path, fixtures_dir, against, tolerance, tolerance_mem, threshold, verbose):
    """Diff records (or replayed fixtures) against the bundled tables."""
    if bool(records_path) == bool(fixtures_dir):
        raise click.UsageError("pass exactly one of --records or --fixtures")
    if records_path:
        records = _load_records(records_path)
    else:
        run = runner_mod.replay_suite(fixtures_dir)
        records = _records_from_run(run, analysis.RecordSource.REPLAYED)
    conformance = analysis.diff_vs_reference(
        records,
        tolerance_alu=tolerance,
        tolerance_memory_frac=tolerance_mem,
    )
    click.echo(report_mod.render_conformance(conformance, verbose), nl=False)
    if conformance.conformance * 100 < threshold:
        sys.exit(EXIT_CONFORMANCE)


# -- reference -------------------------------------------------------------------

@main.command("reference")
@click.option("--table", type=click.Choice(["alu", "memory", "cuda", "gpus"]), default="alu")
@click.option("--format", "fmt", type=click.Choice(["table", "csv", "json"]), default="table")
def cmd_reference(table, fmt):
    """Query and dump the bundled reference tables."""
    tables = ref.load_tables()
    if table == "alu":
        rows = [
            {
                "category": r.category.key,
                "label": r.label,
                "derived": r.derived,
                "optimized": r.optimized,
                "non_optimized": r.non_optimized,
            }
            for r in tables.alu_rows
        ]
    elif table == "memory":
        rows = [
            {
                "probe": r.probe.value,
                "label": r.label,
                "optimized": r.optimized,
                "non_optimized": r.non_optimized,
            }
            for r in tables.memory_rows
        ]
    elif table == "cuda":
        rows = [
            {"category": r.category.key, "label": r.label, "v9": r.v9, "v10": r.v10}
            for r in tables.cuda_rows
        ]
    else:
        rows = [
            {
                "name": g.name,
                "architecture": g.architecture,
                "chip": g.chip,
                "compute_capability": g.compute_capability,
                "gpu_clock_mhz": g.gpu_clock_mhz,
                "l1_size_kb": g.l1_size_kb,
                "l2_size_kb": g.l2_size_kb,
            }
            for g in tables.gpus()
        ]
    if fmt == "json":
        click.echo(json.dumps(rows, indent=1))
    elif fmt == "csv":
        import csv as _csv
        import io as _io

        buf = _io.StringIO()
        writer = _csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        click.echo(buf.getvalue(), nl=False)
    else:
        for row in rows:
            click.echo(json.dumps(row))


def entrypoint(argv: Optional[Sequence[str]] = None) -> int:
    try:
        main.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.UsageError as e:
        click.echo(f"error: {e.format_message()}", err=True)
        return EXIT_CONFIG
    except click.ClickException as e:
        e.show()
        return EXIT_CONFIG
    except SystemExit as e:
        return int(e.code or 0)
    except PtxLatError as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(entrypoint())
