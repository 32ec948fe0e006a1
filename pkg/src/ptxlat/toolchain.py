"""Build pipeline planning and execution.

A kernel goes through four steps: the PTX optimizing assembler produces a
device binary (.cubin), fatbinary wraps it into a .fatbin image, the host
launcher source is compiled with the image path baked in, and the link
produces one standalone measurement executable per kernel. One executable
per kernel keeps measurements isolated.

The optimization level is applied to exactly the device-assembly and
host-compile steps. L1 caching of global loads is a device-build axis
(-dlcm=ca keeps L1+L2, -dlcm=cg bypasses L1): the same global-memory PTX is
built twice so its second load hits L1 in one binary and L2 in the other.

Command lines come from version-keyed templates that default to nvcc/ptxas
conventions and can be overridden from a TOML file, since flags drift
between toolchain releases. Plans are pure data; dry-run execution renders
the exact argv transcript without touching the filesystem or spawning
anything, which makes plans golden-testable.
"""

from __future__ import annotations

import os
import re
import shlex
import shutil
import subprocess
import sys
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .errors import StepFailed, ToolNotFound, UnsupportedConfig
from .ptxgen.codegen import KernelKind, PtxModule
from .runner import LaunchConfig

OPT_LEVELS = ("O0", "O1", "O2", "O3")

L1_ENABLED = "enabled"
L1_DISABLED = "disabled"
L1_NA = "n/a"

TOOLCHAIN_ROOT_ENV = "PTXLAT_CUDA_HOME"

#: argv templates per step; "{l1}" expands to the cache-mode flag and is
#: dropped entirely when the config has no L1 axis.
DEFAULT_TEMPLATES: dict[str, list[str]] = {
    "ptxas": ["{ptxas}", "-O{opt}", "-arch={arch}", "{l1}", "{ptx}", "-o", "{cubin}"],
    "fatbinary": [
        "{fatbinary}",
        "-64",
        "--create={fatbin}",
        "--image=profile={arch},file={cubin}",
    ],
    "host_compile": [
        "{nvcc}",
        "-O{opt}",
        '-DFATBIN_PATH="{fatbin}"',
        "-c",
        "{host_src}",
        "-o",
        "{host_obj}",
    ],
    "link": ["{nvcc}", "{host_obj}", "-o", "{bin}", "-lcuda"],
}

_STEP_ORDER = ("ptxas", "fatbinary", "host_compile", "link")


def load_templates(path: Optional[str] = None, version: Optional[str] = None) -> dict:
    """Step templates, optionally overridden from a TOML file whose top-level
    tables are 'default' plus per-version sections like ['10.0']."""
    templates = {k: list(v) for k, v in DEFAULT_TEMPLATES.items()}
    if path is None:
        return templates
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    with open(path, "rb") as f:
        doc = tomllib.load(f)
    for section in ("default", version):
        if section and section in doc:
            for step, argv in doc[section].items():
                templates[step] = list(argv)
    return templates


@dataclass(frozen=True)
class BuildConfig:
    opt_level: str = "O3"
    l1_mode: str = L1_NA
    target_arch: str = "sm_70"
    toolchain_version: str = ""
    tool_paths: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.opt_level not in OPT_LEVELS:
            raise UnsupportedConfig(f"unknown optimization level {self.opt_level!r}")
        if self.l1_mode not in (L1_ENABLED, L1_DISABLED, L1_NA):
            raise UnsupportedConfig(f"unknown L1 mode {self.l1_mode!r}")


@dataclass(frozen=True)
class BuildStep:
    name: str
    executable: str
    argv: tuple[str, ...]
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]


@dataclass(frozen=True)
class CommandPlan:
    kernel_id: str
    steps: tuple[BuildStep, ...]
    work_dir: str
    initial_inputs: tuple[str, ...]
    artifact: str

    def transcript(self) -> str:
        return "\n".join(shlex.join(s.argv) for s in self.steps) + "\n"


def _arch_cc(arch: str) -> int:
    return int(arch.removeprefix("sm_"))


def plan_compilation(
    module: PtxModule,
    cfg: BuildConfig,
    templates: Optional[dict] = None,
    work_dir: str = "build",
) -> CommandPlan:
    """Deterministic four-step plan for one kernel under one configuration.
    All paths in the argv are relative to ``work_dir``."""
    if _arch_cc(cfg.target_arch) < _arch_cc(module.target_arch):
        raise UnsupportedConfig(
            f"{module.kernel_id} targets {module.target_arch}; cannot assemble "
            f"for older {cfg.target_arch}"
        )
    if module.min_compute_capability * 10 > _arch_cc(cfg.target_arch):
        raise UnsupportedConfig(
            f"{module.kernel_id} needs compute capability >= "
            f"{module.min_compute_capability}, config targets {cfg.target_arch}"
        )
    if cfg.l1_mode != L1_NA and module.kind is not KernelKind.GLOBAL_MEMORY:
        raise UnsupportedConfig(
            "the L1 cache axis applies only to global-memory probe builds"
        )

    templates = templates or load_templates(version=cfg.toolchain_version or None)
    base = module.kernel_id
    if cfg.l1_mode == L1_ENABLED:
        base += "__l1on"
    elif cfg.l1_mode == L1_DISABLED:
        base += "__l1off"

    names = {
        "ptx": f"{module.kernel_id}.ptx",
        "cubin": f"{base}.cubin",
        "fatbin": f"{base}.fatbin",
        "host_src": f"{module.kernel_id}_host.cu",
        "host_obj": f"{base}_host.o",
        "bin": f"{base}_bench",
    }
    subs = {
        "opt": cfg.opt_level[1],
        "arch": cfg.target_arch,
        "l1": {L1_ENABLED: "-dlcm=ca", L1_DISABLED: "-dlcm=cg", L1_NA: ""}[cfg.l1_mode],
        "ptxas": cfg.tool_paths.get("ptxas", "ptxas"),
        "fatbinary": cfg.tool_paths.get("fatbinary", "fatbinary"),
        "nvcc": cfg.tool_paths.get("nvcc", "nvcc"),
        **names,
    }

    io = {
        "ptxas": ((names["ptx"],), (names["cubin"],)),
        "fatbinary": ((names["cubin"],), (names["fatbin"],)),
        "host_compile": ((names["host_src"], names["fatbin"]), (names["host_obj"],)),
        "link": ((names["host_obj"],), (names["bin"],)),
    }
    steps = []
    for step_name in _STEP_ORDER:
        argv = [t.format(**subs) for t in templates[step_name]]
        argv = [a for a in argv if a]  # dropped optional flags
        inputs, outputs = io[step_name]
        steps.append(
            BuildStep(
                name=step_name,
                executable=argv[0],
                argv=tuple(argv),
                inputs=inputs,
                outputs=outputs,
            )
        )
    return CommandPlan(
        kernel_id=base,
        steps=tuple(steps),
        work_dir=work_dir,
        initial_inputs=(names["ptx"], names["host_src"]),
        artifact=names["bin"],
    )


def validate_plan(plan: CommandPlan) -> list[str]:
    """Topological soundness: every step's inputs are initial inputs or
    outputs of earlier steps."""
    errors = []
    available = set(plan.initial_inputs)
    for i, step in enumerate(plan.steps):
        for inp in step.inputs:
            if inp not in available:
                errors.append(f"step {i} ({step.name}) needs {inp!r} which nothing provides")
        available |= set(step.outputs)
    return errors


@dataclass
class StepResult:
    name: str
    command: str
    status: str  # planned | ok | failed
    exit_code: Optional[int] = None
    stdout: str = ""
    stderr: str = ""


@dataclass
class BuildResult:
    kernel_id: str
    mode: str
    steps: list[StepResult]
    artifact: Optional[str] = None

    @property
    def transcript(self) -> str:
        return "\n".join(s.command for s in self.steps) + "\n"


def _resolve_executable(executable: str) -> Optional[str]:
    if os.sep in executable:
        return executable if os.path.isfile(executable) else None
    return shutil.which(executable)


def execute_plan(plan: CommandPlan, mode: str = "dry_run") -> BuildResult:
    """Run (or just print) a plan.

    Dry runs are pure: no files are created, no processes spawned; the
    result carries the fully resolved transcript with status 'planned'.
    Real runs stop at the first failing step.
    """
    if mode not in ("real", "dry_run"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "dry_run":
        return BuildResult(
            kernel_id=plan.kernel_id,
            mode=mode,
            steps=[
                StepResult(name=s.name, command=shlex.join(s.argv), status="planned")
                for s in plan.steps
            ],
            artifact=None,
        )

    for step in plan.steps:
        if _resolve_executable(step.executable) is None:
            raise ToolNotFound(f"{step.executable!r} (needed by step {step.name}) not found")

    os.makedirs(plan.work_dir, exist_ok=True)
    result = BuildResult(kernel_id=plan.kernel_id, mode=mode, steps=[])
    for i, step in enumerate(plan.steps):
        proc = subprocess.run(
            list(step.argv),
            cwd=plan.work_dir,
            capture_output=True,
            text=True,
        )
        result.steps.append(
            StepResult(
                name=step.name,
                command=shlex.join(step.argv),
                status="ok" if proc.returncode == 0 else "failed",
                exit_code=proc.returncode,
                stdout=proc.stdout,
                stderr=proc.stderr,
            )
        )
        if proc.returncode != 0:
            raise StepFailed(i, proc.stderr, result)
    result.artifact = os.path.join(plan.work_dir, plan.artifact)
    return result


# --------------------------------------------------------------------------
# toolchain discovery
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ToolchainInfo:
    available: bool
    version: Optional[str]
    tools: Mapping[str, Optional[str]]


_TOOLS = ("ptxas", "nvcc", "fatbinary")
_VERSION_RE = re.compile(r"release (\d+\.\d+)")


def detect_toolchain(tool_paths: Optional[Mapping[str, str]] = None) -> ToolchainInfo:
    """Probe for the build tools; never raises. Resolution order: explicit
    paths, $PTXLAT_CUDA_HOME/bin, then PATH."""
    tool_paths = tool_paths or {}
    root = os.environ.get(TOOLCHAIN_ROOT_ENV)
    found: dict[str, Optional[str]] = {}
    for tool in _TOOLS:
        candidates = []
        if tool in tool_paths:
            candidates.append(tool_paths[tool])
        if root:
            candidates.append(os.path.join(root, "bin", tool))
        candidates.append(tool)
        path = None
        for cand in candidates:
            path = _resolve_executable(cand)
            if path:
                break
        found[tool] = path

    version = None
    for tool in ("ptxas", "nvcc"):
        if not found.get(tool):
            continue
        try:
            proc = subprocess.run(
                [found[tool], "--version"], capture_output=True, text=True, timeout=30
            )
        except OSError:
            continue
        m = _VERSION_RE.search(proc.stdout or "")
        if m:
            version = m.group(1)
            break
    available = bool(found["ptxas"] and found["nvcc"])
    return ToolchainInfo(available=available, version=version, tools=found)


# --------------------------------------------------------------------------
# host launcher generation
# --------------------------------------------------------------------------

_ELEM_BYTES = {"u32": 4, "s32": 4, "f32": 4, "u64": 8, "s64": 8, "f64": 8, "f16": 2}
_HOST_INIT = {
    "u32": "1234567u + 97u * i",
    "s32": "1234567 + 97 * (int)i",
    "u64": "123456789ull + 97ull * i",
    "s64": "123456789ll + 97ll * (long long)i",
    "f32": "1234.5f + 0.75f * i",
    "f64": "1234.5 + 0.75 * i",
    "f16": "0x40E0u + (unsigned short)i",  # raw half bits
}
_HOST_CTYPE = {
    "u32": "unsigned int",
    "s32": "int",
    "u64": "unsigned long long",
    "s64": "long long",
    "f32": "float",
    "f64": "double",
    "f16": "unsigned short",
}


def emit_host_launcher(module: PtxModule, launch: Optional[LaunchConfig] = None) -> str:
    """Driver-API C source that loads the built device image, sets up every
    kernel parameter, launches with the configured geometry, and prints one
    machine-parseable line per output:

        RESULT <kernel-id> <output-name> <unsigned value>

    Values are the raw stored bits printed as unsigned decimals, which is
    exact for the cycle-delta outputs and stable for dummy sinks.
    """
    launch = launch or LaunchConfig()
    gx, gy, gz = launch.grid
    bx, by, bz = launch.block

    setup, args, collect = [], [], []
    for i, p in enumerate(module.params):
        var = f"p{i}"
        if p.role == "tex":
            nbytes = _ELEM_BYTES[p.elem] * p.array_len
            setup += [
                f"    CUdeviceptr {var}_mem;",
                f"    CHECK(cuMemAlloc(&{var}_mem, {nbytes}), \"alloc {p.name}\");",
                f"    {{ {_HOST_CTYPE[p.elem]} h[{p.array_len}];",
                f"      for (size_t i = 0; i < {p.array_len}; i++) h[i] = {_HOST_INIT[p.elem]};",
                f"      CHECK(cuMemcpyHtoD({var}_mem, h, {nbytes}), \"init {p.name}\"); }}",
                "    CUDA_RESOURCE_DESC res; memset(&res, 0, sizeof res);",
                "    res.resType = CU_RESOURCE_TYPE_LINEAR;",
                f"    res.res.linear.devPtr = {var}_mem;",
                "    res.res.linear.format = CU_AD_FORMAT_UNSIGNED_INT32;",
                "    res.res.linear.numChannels = 1;",
                f"    res.res.linear.sizeInBytes = {nbytes};",
                "    CUDA_TEXTURE_DESC td; memset(&td, 0, sizeof td);",
                "    td.addressMode[0] = CU_TR_ADDRESS_MODE_CLAMP;",
                "    td.filterMode = CU_TR_FILTER_MODE_POINT;",
                f"    CUtexObject {var};",
                f"    CHECK(cuTexObjectCreate(&{var}, &res, &td, NULL), \"texture {p.name}\");",
            ]
            args.append(f"&{var}")
            continue
        nbytes = _ELEM_BYTES[p.elem] * p.array_len
        setup += [
            f"    CUdeviceptr {var};",
            f"    CHECK(cuMemAlloc(&{var}, {nbytes}), \"alloc {p.name}\");",
        ]
        if p.role == "in":
            setup += [
                f"    {{ {_HOST_CTYPE[p.elem]} h[{p.array_len}];",
                f"      for (size_t i = 0; i < {p.array_len}; i++) h[i] = {_HOST_INIT[p.elem]};",
                f"      CHECK(cuMemcpyHtoD({var}, h, {nbytes}), \"init {p.name}\"); }}",
            ]
        else:
            setup.append(f"    CHECK(cuMemsetD8({var}, 0, {nbytes}), \"zero {p.name}\");")
        args.append(f"&{var}")
        if p.role == "out":
            width = _ELEM_BYTES[p.elem]
            ctype = "unsigned long long" if width == 8 else "unsigned int"
            fmt = "%llu" if width == 8 else "%u"
            collect += [
                f"    {{ {ctype} v = 0;",
                f"      unsigned char raw[{width}];",
                f"      CHECK(cuMemcpyDtoH(raw, {var}, {width}), \"read {p.name}\");",
                f"      memcpy(&v, raw, {width});",
                f"      printf(\"RESULT %s %s {fmt}\\n\", \"{module.kernel_id}\", "
                f"\"{p.output_name}\", v); }}",
            ]

    body = "\n".join(setup + [
        "",
        f"    void *kernel_args[] = {{ {', '.join(args)} }};",
        f"    CHECK(cuLaunchKernel(fn, {gx}, {gy}, {gz}, {bx}, {by}, {bz}, 0, 0, "
        "kernel_args, NULL), \"launch\");",
        "    CHECK(cuCtxSynchronize(), \"sync\");",
        "",
    ] + collect)

    return f"""\
/* Generated measurement launcher for {module.kernel_id}. */
#include <cuda.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#ifndef FATBIN_PATH
#define FATBIN_PATH "{module.kernel_id}.fatbin"
#endif

static void check_(CUresult r, const char *what) {{
    if (r != CUDA_SUCCESS) {{
        const char *msg = NULL;
        cuGetErrorString(r, &msg);
        fprintf(stderr, "ERROR %s: %s\\n", what, msg ? msg : "unknown");
        exit(1);
    }}
}}
#define CHECK(call, what) check_((call), (what))

int main(int argc, char **argv) {{
    const char *image = argc > 1 ? argv[1] : FATBIN_PATH;
    CHECK(cuInit(0), "init");
    CUdevice dev;
    CHECK(cuDeviceGet(&dev, 0), "device");
    CUcontext ctx;
    CHECK(cuCtxCreate(&ctx, 0, dev), "context");
    CUmodule mod;
    CHECK(cuModuleLoad(&mod, image), "module load");
    CUfunction fn;
    CHECK(cuModuleGetFunction(&fn, mod, "{module.entry_name}"), "entry lookup");

{body}

    cuCtxDestroy(ctx);
    return 0;
}}
"""
