# main.py - Точка входа
#!/usr/bin/env python3
"""
impulse-lab - эксперименты с импульсными управляемыми системами

Использование:
    python main.py check data/toy_system.dsl
    python main.py simulate data/toy_system.dsl data/toy_control.json --x-bar 1
    python main.py study pdlimit data/toy_system.dsl data/toy_control.json --x-bar 1
    python main.py optimize data/toy_problem.json --extension
    python main.py hjb data/toy_problem.json --K 2
    python main.py reach data/toy_problem.json --classes L1 AC -n 2000

Коды выхода: 0 - успех, 1 - проверка/симуляция не прошла, 2 - ошибка разбора входных данных.
"""

import argparse
import logging
import os
import sys
from itertools import combinations
from pathlib import Path
from typing import List, Optional

# Добавляем текущую папку в PYTHONPATH
sys.path.insert(0, str(Path(__file__).parent))

import numpy as np

from artifacts import RunManifest, report_csv, trajectory_csv, write_csv, write_json
from config import JAC_MODES, config
from controls import load_control
from errors import (
    DimensionMismatchError,
    DslSyntaxError,
    ImpulseDomainError,
    ImpulseLabError,
    InputFormatError,
    UnknownIdentifierError,
)
from flowbox import FlowBoxChart, estimate_dphi_bound
from hjb import GridSpec, crossvalidate_w, solve_w
from mayer import (
    CLASSES,
    ControlParameterization,
    cloud_spacing,
    estimate_value,
    hausdorff_distance,
    load_problem,
    proper_extension_check,
    sample_reachable,
)
from solver import (
    lipschitz_dependence_probe,
    make_grid,
    pd_limit_study,
    pd_solution,
    pd_solution_by_jumps,
    solve_original_ac,
)
from spacetime import density_study, equivalence_pd_vs_spacetime, rectilinear_completion
from sysmodel import BoxSet, check_hypotheses, load_system

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_PARSE = 2

PARSE_ERRORS = (DslSyntaxError, UnknownIdentifierError, DimensionMismatchError, ImpulseDomainError,
                InputFormatError)


def setup_logging(level: str, log_file: str):
    """
    Логи в файл и в консоль
    """
    os.makedirs(os.path.dirname(log_file) or ".", exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ],
        force=True,
    )


def apply_overrides(args: argparse.Namespace):
    """Флаги командной строки перекрывают переменные окружения"""
    if args.seed is not None:
        config.seed = args.seed
    if args.ode_tol is not None:
        config.ode_tol = args.ode_tol
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    if args.threads is not None:
        config.threads = args.threads
    if args.jac_mode is not None:
        config.jac_mode = args.jac_mode
    if args.log_level is not None:
        config.log_level = args.log_level


def _output(manifest: RunManifest, name: str) -> str:
    return manifest.add_output(os.path.join(config.out_dir, name))


def _x_bar(values: Optional[List[float]], n: int) -> np.ndarray:
    if values is None:
        return np.ones(n)
    if len(values) != n:
        raise DimensionMismatchError(f"--x-bar задает {len(values)} компонент вместо n={n}")
    return np.array(values, dtype=float)


# ---------------------------------------------------------------------------
# Команды
# ---------------------------------------------------------------------------

def cmd_check(args, manifest: RunManifest) -> int:
    system = load_system(args.system)
    manifest.inputs["system"] = args.system
    dim = system.n + system.m
    box = BoxSet.from_bounds([-args.box_radius] * dim, [args.box_radius] * dim)
    report = check_hypotheses(system, box, args.samples, args.tol_bracket, config.seed)
    if report.passed.get("commutativity"):
        chart = FlowBoxChart(system, box)
        report.dphi_bound = estimate_dphi_bound(chart, box, seed=config.seed)
    write_json(_output(manifest, "hypotheses.json"), report.to_dict())
    print(report.summary())
    return EXIT_OK if report.all_passed else EXIT_FAILED


def _simulate(system, signal, x_bar, method: str, grid):
    if method == "direct":
        return solve_original_ac(system, x_bar, signal, grid)
    if method == "jumps":
        return pd_solution_by_jumps(system, x_bar, signal, grid)
    return pd_solution(FlowBoxChart(system), x_bar, signal, grid)


def cmd_simulate(args, manifest: RunManifest) -> int:
    system = load_system(args.system)
    signal = load_control(args.control, config.k_max).validate(system)
    manifest.inputs.update({"system": args.system, "control": args.control})
    x_bar = _x_bar(args.x_bar, system.n)
    grid = make_grid(signal, args.points)

    logger.info(f"🚀 Симуляция ({args.method}): {len(signal.jump_times)} разрывов u")
    trajectory = _simulate(system, signal, x_bar, args.method, grid)
    trajectory_csv(_output(manifest, "trajectory.csv"), trajectory)
    logger.info(f"✅ x(b) = {trajectory.final.tolist()}")
    return EXIT_OK


def cmd_study(args, manifest: RunManifest) -> int:
    system = load_system(args.system)
    manifest.inputs["system"] = args.system
    x_bar = _x_bar(args.x_bar, system.n)
    chart = FlowBoxChart(system)

    if args.kind == "lipschitz":
        lo, hi = system.U.bounds()
        report = lipschitz_dependence_probe(chart, args.radius, BoxSet.from_bounds(lo, hi), args.pairs,
                                            seed=config.seed, method="jumps")
        write_json(_output(manifest, "study.json"), report.to_dict())
        return EXIT_OK if np.isfinite(report.constant) else EXIT_FAILED

    if args.control is None:
        raise ImpulseLabError(f"Исследование {args.kind} требует файл управления")
    signal = load_control(args.control, config.k_max).validate(system)
    manifest.inputs["control"] = args.control

    if args.kind == "equivalence":
        report = equivalence_pd_vs_spacetime(chart, x_bar, signal)
        write_json(_output(manifest, "study.json"), report.to_dict())
        return EXIT_OK if report.passed else EXIT_FAILED

    if args.kind == "pdlimit":
        t_star = args.t_star if args.t_star is not None else (signal.jump_times or [(signal.a + signal.b) / 2])[0]
        report = pd_limit_study(chart, x_bar, signal, t_star, range(args.k_min, args.k_max + 1))
    else:
        report = density_study(system, x_bar, rectilinear_completion(signal))

    write_json(_output(manifest, "study.json"), report.to_dict())
    report_csv(_output(manifest, "study.csv"), report.rows)
    if report.passed:
        logger.info(f"✅ Исследование {args.kind} пройдено, наклон {report.slope}")
        return EXIT_OK
    logger.warning(f"⚠️ Исследование {args.kind} не прошло: монотонность {report.monotone}")
    return EXIT_FAILED


def cmd_optimize(args, manifest: RunManifest) -> int:
    problem, model = load_problem(args.problem)
    manifest.inputs["problem"] = args.problem
    budget = args.budget or model.budget
    seed = config.seed if args.seed is not None else model.seed
    manifest.seed = seed

    if args.extension:
        report = proper_extension_check(problem, budget, model.K_list, seed, class_order=args.class_order,
                                        pieces=model.pieces)
        write_json(_output(manifest, "extension.json"), report.to_dict())
        report_csv(_output(manifest, "values.csv"), report.table())
        for row in report.table():
            label = row["class"] if row["K"] == "" else f"{row['class']}(K={row['K']:g})"
            print(f"V_{label} = {row['value']:.9g}")
        return EXIT_OK if report.passed else EXIT_FAILED

    control_class = args.control_class or model.control_class
    K = args.K if args.K is not None else model.K
    param = ControlParameterization.for_problem(problem, control_class, K, model.pieces)
    report = estimate_value(problem, param, budget, seed)
    write_json(_output(manifest, "value_report.json"), report.to_dict())
    report_csv(_output(manifest, "trace.csv"), report.trace)
    print(f"V_{control_class} = {report.best_value:.9g}")
    return EXIT_OK


def cmd_hjb(args, manifest: RunManifest) -> int:
    problem, model = load_problem(args.problem)
    manifest.inputs["problem"] = args.problem
    K = args.K if args.K is not None else (model.K if model.K is not None else 2.0)
    overrides = dict(model.grid or {})
    if args.per_axis is not None:
        overrides["per_axis"] = args.per_axis
    if args.time_steps is not None:
        overrides["time_steps"] = args.time_steps
    spec = GridSpec.for_problem(problem, overrides)

    if args.skip_crossvalidate:
        grid = solve_w(problem, K, spec)
    else:
        seed = config.seed if args.seed is not None else model.seed
        report = crossvalidate_w(problem, K, spec, args.budget or model.budget, seed, levels=args.levels,
                                 pieces=model.pieces)
        write_json(_output(manifest, "crossvalidation.json"), report.to_dict())
        report_csv(_output(manifest, "crossvalidation.csv"), report.levels)
        grid = report.grids[-1]

    grid.save_binary(_output(manifest, "w_grid.bin"))
    write_json(_output(manifest, "w_grid.json"), grid.diagnostics)
    grid.export_slice_csv(_output(manifest, f"w_slice_t{args.t_index}_k{args.k_index}.csv"),
                          args.t_index, args.k_index)
    w0 = grid.value_at(problem.x_bar, problem.u_bar, 0.0)
    print(f"W_K(a, x_bar, u_bar, 0) = {w0:.9g}")
    if not args.skip_crossvalidate and not report.passed:
        logger.warning("⚠️ Сверка W_K с прямой оптимизацией не прошла")
        return EXIT_FAILED
    return EXIT_OK


def cmd_reach(args, manifest: RunManifest) -> int:
    problem, model = load_problem(args.problem)
    manifest.inputs["problem"] = args.problem
    classes = args.classes or model.classes
    n_samples = args.n or model.n_samples
    K = args.K if args.K is not None else model.K
    seed = config.seed if args.seed is not None else model.seed

    clouds = {}
    for cls in classes:
        cloud = sample_reachable(problem, cls, K, n_samples, seed)
        clouds[cls] = cloud
        header = ([f"x{i + 1}" for i in range(problem.system.n)] + [f"u{i + 1}" for i in range(problem.system.m)]
                  + ["K", "seed"])
        k_cell = "" if cloud.K is None else cloud.K
        write_csv(_output(manifest, f"cloud_{cls}.csv"), header,
                  (point + [k_cell, cloud.seed] for point in cloud.points.tolist()))

    rows = []
    for a, b in combinations(classes, 2):
        d_ab, d_ba = hausdorff_distance(clouds[a], clouds[b])
        rows.append({"A": a, "B": b, "d_A_to_B": d_ab, "d_B_to_A": d_ba,
                     "spacing_A": cloud_spacing(clouds[a]), "spacing_B": cloud_spacing(clouds[b])})
    report_csv(_output(manifest, "hausdorff.csv"), rows)
    for row in rows:
        print(f"d({row['A']} -> {row['B']}) = {row['d_A_to_B']:.4g}, d({row['B']} -> {row['A']}) = {row['d_B_to_A']:.4g}")
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "study": cmd_study,
    "optimize": cmd_optimize,
    "hjb": cmd_hjb,
    "reach": cmd_reach,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="impulse-lab - импульсные управляемые системы: решения, оценки цены, HJB"
    )
    parser.add_argument("--seed", type=int, help="Зерно всех случайных потоков")
    parser.add_argument("--ode-tol", type=float, help="rtol = atol интегратора")
    parser.add_argument("--out-dir", type=str, help="Каталог для результатов")
    parser.add_argument("--threads", type=int, help="Число потоков (иначе IMPULSE_THREADS)")
    parser.add_argument("--jac-mode", choices=JAC_MODES, help="Как считать Dphi")
    parser.add_argument("--log-level", type=str, help="Уровень логирования")
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="Проверить гипотезы для системы")
    check.add_argument("system")
    check.add_argument("--box-radius", type=float, default=1.0)
    check.add_argument("--samples", type=int, default=256)
    check.add_argument("--tol-bracket", type=float)

    simulate = sub.add_parser("simulate", help="p.d. решение для управления")
    simulate.add_argument("system")
    simulate.add_argument("control")
    simulate.add_argument("--x-bar", type=float, nargs="+")
    simulate.add_argument("--method", choices=("pd", "jumps", "direct"), default="pd")
    simulate.add_argument("--points", type=int, default=201)

    study = sub.add_parser("study", help="Исследования сходимости")
    study.add_argument("kind", choices=("pdlimit", "density", "equivalence", "lipschitz"))
    study.add_argument("system")
    study.add_argument("control", nargs="?")
    study.add_argument("--x-bar", type=float, nargs="+")
    study.add_argument("--t-star", type=float)
    study.add_argument("--k-min", type=int, default=1)
    study.add_argument("--k-max", type=int, default=6)
    study.add_argument("--radius", type=float, default=1.0)
    study.add_argument("--pairs", type=int, default=10)

    optimize = sub.add_parser("optimize", help="Оценка функции цены задачи Майера")
    optimize.add_argument("problem")
    optimize.add_argument("--class", dest="control_class", choices=CLASSES)
    optimize.add_argument("--K", type=float)
    optimize.add_argument("--budget", type=int)
    optimize.add_argument("--extension", action="store_true", help="V_AC = V_L1 и предел K -> inf")
    optimize.add_argument("--class-order", action="store_true", help="Проверить порядок классов по K")

    hjb = sub.add_parser("hjb", help="Сеточная W_K и сверка с V_BV_K")
    hjb.add_argument("problem")
    hjb.add_argument("--K", type=float)
    hjb.add_argument("--per-axis", type=int)
    hjb.add_argument("--time-steps", type=int)
    hjb.add_argument("--levels", type=int, default=3)
    hjb.add_argument("--budget", type=int)
    hjb.add_argument("--t-index", type=int, default=0)
    hjb.add_argument("--k-index", type=int, default=0)
    hjb.add_argument("--skip-crossvalidate", action="store_true")

    reach = sub.add_parser("reach", help="Облака достижимых точек и расстояния Хаусдорфа")
    reach.add_argument("problem")
    reach.add_argument("--classes", nargs="+", choices=CLASSES)
    reach.add_argument("--K", type=float)
    reach.add_argument("-n", type=int)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Главная функция с обработкой аргументов командной строки
    """
    args = build_parser().parse_args(argv)
    apply_overrides(args)
    setup_logging(config.log_level, config.log_file)

    if not config.validate():
        return EXIT_PARSE

    os.makedirs(config.out_dir, exist_ok=True)
    manifest = RunManifest(command=args.command, seed=config.seed, tolerances=config.as_dict(),
                           arguments={k: v for k, v in vars(args).items() if k != "command"})
    try:
        code = COMMANDS[args.command](args, manifest)
    except PARSE_ERRORS as e:
        logger.error(f"❌ Ошибка разбора: {e}")
        code = EXIT_PARSE
    except OSError as e:
        logger.error(f"❌ Не удалось прочитать входной файл: {e}")
        code = EXIT_PARSE
    except ImpulseLabError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        code = EXIT_FAILED

    manifest.finish(code).write(config.out_dir)
    return code


if __name__ == "__main__":
    sys.exit(main())
