"""Batch front-end: run benchmark optimisations from plain config files.

Subcommands:
  run <config> [--out DIR] [--threads N]   full optimisation with VTK,
                                           history and figure output
  check-gradients <config>                 finite-difference derivative audit
  reinit-demo <config>                     reinitialisation kernel smoke test

Config files hold one ``key = value`` pair per line with ``#`` comments.
Exit codes: 0 converged, 2 max_iter reached, 3 stalled, 4 config error,
5 solver failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import evolve as ev
from . import fem, figures, interp, opt, problems, sens
from .problems import ConfigError

ENV_OUT = "LSOPT_OUT"


def _parse_int_list(s):
    return tuple(int(tok) for tok in s.split())


def _parse_float_list(s):
    return tuple(float(tok) for tok in s.split())


def _parse_bool(s):
    if s.lower() in ("true", "1", "yes", "on"):
        return True
    if s.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (parser, default); REQUIRED marks keys that must be present
REQUIRED = object()

CONFIG_SCHEMA = {
    "problem": (str, REQUIRED),
    "el_size": (_parse_int_list, None),
    "origin": (_parse_float_list, None),
    "lengths": (_parse_float_list, None),
    "vf": (float, 0.4),
    "kappa": (float, 1.0),
    "flux": (float, 1.0),
    "young": (float, 1.0),
    "poisson": (float, 0.3),
    "traction": (_parse_float_list, (0.0, -1.0)),
    "prop_gamma_n": (float, 0.2),
    "prop_gamma_d": (float, 0.2),
    "eta": (float, None),
    "eps": (float, 1e-3),
    "gamma": (float, 0.1),
    "gamma_reinit": (float, 0.5),
    "max_steps": (int, None),
    "tol": (float, 1e-3),
    "deriv_mode": (str, "analytic"),
    "solver_rtol": (float, 1e-10),
    "solver_max_iter": (int, None),
    "lsf_xi": (float, None),
    "lsf_a": (float, None),
    "lsf_shift": (float, 0.0),
    "max_iter": (int, 1000),
    "iter_mod": (int, 10),
    "out": (str, None),
    "deterministic": (_parse_bool, True),
}

PROBLEM_DEFAULTS = {
    "thermal2d": {"el_size": (100, 100), "lengths": (1.0, 1.0), "lsf_xi": 6.0, "lsf_a": 0.4},
    "elastic2d": {"el_size": (160, 80), "lengths": (2.0, 1.0), "lsf_xi": 4.0, "lsf_a": 0.2},
    "homog2d": {"el_size": (64, 64), "lengths": (1.0, 1.0), "lsf_xi": 4.0, "lsf_a": 0.2},
}


class RunConfig:
    """Typed view of a parsed config file."""

    def __init__(self, values):
        self.values = values
        self.problem = values["problem"]
        self.iter_mod = values["iter_mod"]
        self.out = values["out"]
        self.deterministic = values["deterministic"]

    def problem_spec(self):
        v = self.values
        spec = problems.ProblemSpec(
            el_size=v["el_size"], origin=v["origin"], lengths=v["lengths"],
            vf=v["vf"], kappa=v["kappa"], flux=v["flux"],
            young=v["young"], poisson=v["poisson"], traction=v["traction"],
            prop_gamma_n=v["prop_gamma_n"], prop_gamma_d=v["prop_gamma_d"],
            eta=v["eta"], eps=v["eps"], gamma=v["gamma"],
            gamma_reinit=v["gamma_reinit"], max_steps=v["max_steps"],
            tol=v["tol"], deriv_mode=v["deriv_mode"],
            solver_rtol=v["solver_rtol"], solver_max_iter=v["solver_max_iter"],
            lsf_xi=v["lsf_xi"], lsf_a=v["lsf_a"], lsf_shift=v["lsf_shift"],
            max_iter=v["max_iter"],
        )
        spec.validate()
        return spec


def parse_config(text):
    """Parse ``key = value`` lines into a RunConfig; every bad line is reported."""
    values = {}
    errors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {raw!r}")
            continue
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in CONFIG_SCHEMA:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        parser, _default = CONFIG_SCHEMA[key]
        try:
            values[key] = parser(val)
        except Exception as exc:
            errors.append(f"line {lineno}: bad value for {key!r}: {exc}")
    for key, (parser, default) in CONFIG_SCHEMA.items():
        if key in values:
            continue
        if default is REQUIRED:
            errors.append(f"missing required key {key!r}")
        else:
            values[key] = default
    if not errors:
        prob = values["problem"]
        if prob not in problems.PROBLEM_BUILDERS:
            errors.append(
                f"unknown problem {prob!r}; choose from {sorted(problems.PROBLEM_BUILDERS)}"
            )
        else:
            for key, default in PROBLEM_DEFAULTS[prob].items():
                if values[key] is None:
                    values[key] = default
        if values.get("vf") is not None and not 0 < values["vf"] < 1:
            errors.append(f"vf must lie in (0, 1), got {values['vf']}")
    if errors:
        raise ConfigError("; ".join(errors))
    return RunConfig(values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# -- writers --------------------------------------------------------------------


def _fmt(x):
    return f"{x:.17g}"


def write_vtk(mesh, fields, path):
    """Legacy ASCII structured-points VTK file; periodic grids are unwrapped.

    ``fields`` maps name -> (values, n_components) or name -> flat array.
    """
    counts = tuple(n + 1 for n in mesh.el_size)
    dims = counts + (1,) * (3 - mesh.dim)
    spacing = mesh.delta + (1.0,) * (3 - mesh.dim)
    origin = mesh.origin + (0.0,) * (3 - mesh.dim)
    n_out = int(np.prod(counts))

    def unwrap(values, ncomp):
        values = np.asarray(values, dtype=float).reshape(mesh.n_nodes, ncomp)
        idx_axes = [
            np.arange(counts[ax]) % mesh.node_counts[ax] for ax in range(mesh.dim)
        ]
        grids = np.meshgrid(*idx_axes, indexing="ij")
        flat = np.zeros(np.prod(counts), dtype=np.int64)
        base = [g.T.ravel() for g in grids]
        for ax in reversed(range(mesh.dim)):
            flat = flat * mesh.node_counts[ax] + base[ax]
        return values[flat]

    lines = [
        "# vtk DataFile Version 3.0",
        "lsopt fields",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(str(d) for d in dims),
        "ORIGIN " + " ".join(_fmt(o) for o in origin),
        "SPACING " + " ".join(_fmt(s) for s in spacing),
        f"POINT_DATA {n_out}",
    ]
    for name, obj in fields.items():
        if isinstance(obj, tuple):
            values, ncomp = obj
        else:
            values, ncomp = obj, 1
        data = unwrap(values, ncomp)
        if ncomp == 1:
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_fmt(v) for v in data[:, 0])
        else:
            lines.append(f"VECTORS {name} double")
            for row in data:
                padded = list(row) + [0.0] * (3 - ncomp)
                lines.append(" ".join(_fmt(v) for v in padded))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_vtk_points(path):
    """Reparse a structured-points file written by :func:`write_vtk`."""
    fields = {}
    with open(path, encoding="utf-8") as fh:
        tokens = fh.read().splitlines()
    i = 0
    n = None
    while i < len(tokens):
        line = tokens[i]
        if line.startswith("POINT_DATA"):
            n = int(line.split()[1])
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            vals = [float(tokens[j]) for j in range(i + 2, i + 2 + n)]
            fields[name] = np.array(vals)
            i += 1 + n
        elif line.startswith("VECTORS"):
            name = line.split()[1]
            rows = [[float(t) for t in tokens[j].split()] for j in range(i + 1, i + 1 + n)]
            fields[name] = np.array(rows)
            i += n
        i += 1
    return fields


def write_history(history, path):
    """Space-separated history table: iter J C_1..C_N L gamma."""
    n_c = len(history[0].C) if len(history) else 1
    header = "iter J " + " ".join(f"C_{i+1}" for i in range(n_c)) + " L gamma"
    lines = [header]
    for r in history:
        cs = " ".join(_fmt(c) for c in r.C)
        lines.append(f"{r.iteration} {_fmt(r.J)} {cs} {_fmt(r.L)} {_fmt(r.gamma)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_history(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split()
    rows = [[float(t) for t in line.split()] for line in lines[1:]]
    return header, np.array(rows)


# -- subcommands ------------------------------------------------------------------


def _out_dir(config, cli_out):
    out = cli_out or os.environ.get(ENV_OUT) or config.out or os.path.join(
        "results", config.problem
    )
    os.makedirs(out, exist_ok=True)
    return out


def _vtk_fields(problem, phi, evaluation):
    mesh = problem.mesh
    fields = {
        "phi": phi,
        "grad_norm": ev.gradient_norm(phi, mesh),
    }
    velocity = problem.last_velocity
    fields["velocity"] = velocity if velocity is not None else np.zeros(mesh.n_nodes)
    states = evaluation.states
    if not isinstance(states, list):
        states = [states]
    ncomp = problem.state_map.space.n_components
    for i, s in enumerate(states):
        name = "state" if len(states) == 1 else f"state_{i+1}"
        fields[name] = (s, ncomp)
    return fields


def run_command(config, out_dir, threads=1):
    problem = problems.build_problem(config.problem, config.problem_spec())
    phi0 = problem.initial_phi()
    iter_mod = max(1, config.iter_mod)
    written = set()

    def callback(record, prob, phi, evaluation):
        if record.iteration % iter_mod == 0:
            path = os.path.join(out_dir, f"fields_{record.iteration:05d}.vtk")
            write_vtk(prob.mesh, _vtk_fields(prob, phi, evaluation), path)
            written.add(record.iteration)

    params = opt.OptimiserParams(
        max_iter=config.values["max_iter"], callback=callback, verbose=True
    )
    try:
        result = opt.run(problem, phi0, params)
    except fem.SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 5
    final_it = result.history[-1].iteration if len(result.history) else 0
    if final_it and final_it not in written:
        evaluation = problem.evaluate(result.phi)
        write_vtk(
            problem.mesh,
            _vtk_fields(problem, result.phi, evaluation),
            os.path.join(out_dir, f"fields_{final_it:05d}.vtk"),
        )
    write_history(result.history, os.path.join(out_dir, "history.txt"))
    figures.history_figure(result.history, os.path.join(out_dir, "history.png"))
    figures.design_figure(problem.mesh, result.phi, os.path.join(out_dir, "design.png"))
    print(f"status: {result.status} after {len(result.history)} iterations")
    print(f"output written to {out_dir}")
    return {"converged": 0, "max_iter": 2, "stalled": 3}[result.status]


def check_gradients_command(config, n_sample=20, h_scale=1e-6, seed=0, _corrupt=None):
    """FD audit of the objective and constraint derivative paths."""
    problem = problems.build_problem(config.problem, config.problem_spec())
    mesh = problem.mesh
    phi = problem.initial_phi()
    ev.reinit(phi, problem.evolve_params, mesh)
    evaluation = problem.evaluate(phi)
    rng = np.random.default_rng(seed)
    band = np.flatnonzero(np.abs(phi) < 2 * problem.interp.eta)
    pool = band if len(band) >= n_sample else np.arange(mesh.n_nodes)
    nodes = rng.choice(pool, min(n_sample, len(pool)), replace=False)
    h_fd = h_scale * float(np.max(np.abs(phi)))

    functionals = [("J", problem.objective)] + [
        (f"C_{i+1}", c) for i, c in enumerate(problem.constraints)
    ]
    all_ok = True
    report = []
    for idx, (label, functional) in enumerate(functionals):
        grad = sens.adjoint_gradient(functional, problem.state_map, evaluation.states, phi)
        if _corrupt is not None and _corrupt[0] == label:
            grad[_corrupt[1]] *= 2.0

        def pipeline(p, f=functional):
            states = problem.state_map.solve(p)
            return sens.functional_value(f, states, p, mesh)

        fd = sens.fd_gradient_oracle(pipeline, phi, nodes, h_fd)
        scale = max(float(np.max(np.abs(fd))), 1e-14)
        rel = np.abs(grad[nodes] - fd) / scale
        worst = int(np.argmax(rel))
        ok = rel.max() <= 1e-5
        all_ok &= ok
        status = "PASS" if ok else f"FAIL at node {nodes[worst]}"
        line = f"{status} {label}: max rel err {rel.max():.3e} over {len(nodes)} nodes"
        report.append(line)
        print(line)
    return all_ok, report


def reinit_demo_command(config, out_dir):
    problem = problems.build_problem(config.problem, config.problem_spec())
    mesh = problem.mesh
    phi = problem.initial_phi()
    before = phi.copy()
    result = ev.reinit(phi, problem.evolve_params, mesh)
    gn = ev.gradient_norm(phi, mesh)
    write_vtk(mesh, {"phi_before": before, "phi": phi, "grad_norm": gn},
              os.path.join(out_dir, "reinit_demo.vtk"))
    figures.design_figure(mesh, phi, os.path.join(out_dir, "reinit_demo.png"))
    print(f"reinit: steps={result.steps} converged={result.converged} "
          f"last_delta={result.last_delta:.3e}")
    interior = _interior_mask(mesh)
    print(f"max ||grad phi| - 1| away from the boundary: {np.abs(gn - 1.0)[interior].max():.3e}")
    return 0


def _interior_mask(mesh):
    c = mesh.node_coordinates()
    mask = np.ones(mesh.n_nodes, dtype=bool)
    for ax in range(mesh.dim):
        if mesh.periodic[ax]:
            continue
        lo = mesh.origin[ax] + 2 * mesh.delta[ax]
        hi = mesh.origin[ax] + mesh.lengths[ax] - 2 * mesh.delta[ax]
        mask &= (c[:, ax] > lo) & (c[:, ax] < hi)
    return mask


def main(argv=None):
    parser = argparse.ArgumentParser(prog="lsopt", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an optimisation from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--threads", type=int, default=1,
                       help="reserved; execution is single-threaded for determinism")
    p_chk = sub.add_parser("check-gradients", help="FD audit of derivative paths")
    p_chk.add_argument("config")
    p_dem = sub.add_parser("reinit-demo", help="reinitialisation kernel smoke test")
    p_dem.add_argument("config")
    p_dem.add_argument("--out", default=None)
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4

    try:
        if args.command == "run":
            return run_command(config, _out_dir(config, args.out), threads=args.threads)
        if args.command == "check-gradients":
            ok, _report = check_gradients_command(config)
            return 0 if ok else 1
        if args.command == "reinit-demo":
            return reinit_demo_command(config, _out_dir(config, getattr(args, "out", None)))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4
    except fem.SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
