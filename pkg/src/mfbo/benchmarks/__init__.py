"""Test problems, airfoil geometry and the external evaluator protocol."""
from .airfoils import (NACA_DOMAIN, PARSEC_DOMAIN, AirfoilGeometry, GeometryError, Naca4Params,
                       ParsecParams, format_selig, naca4_geometry, parsec_coefficients,
                       parsec_geometry)
from .external import (EvaluationError, ExternalEvaluator, close_problem, external_evaluator,
                       external_problem)
from .functions import (HARTMANN_F_STAR, HARTMANN_UNSCALED_MIN, HARTMANN_X_STAR, BenchmarkProblem,
                        al_toy_problem, cei_toy_problem, feasible_toy_problem, hartmann6,
                        hartmann_problem, levy2d, levy_problem, linear_mf_problem,
                        quadratic_problem)
from .standin import multipoint_standin_objective, naca_standin_problem, parsec_standin_problem

_REGISTRY = {
    "levy2d": levy_problem,
    "hartmann6": hartmann_problem,
    "naca4-standin": naca_standin_problem,
    "parsec-standin": parsec_standin_problem,
    "quadratic1d": quadratic_problem,
    "linear-mf": linear_mf_problem,
    "al-toy": al_toy_problem,
    "cei-toy": cei_toy_problem,
    "feasible-toy": feasible_toy_problem,
}


def list_benchmarks():
    return sorted(_REGISTRY)


def get_benchmark(name: str, costs=None) -> BenchmarkProblem:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(list_benchmarks())}") from None
    problem = factory()
    if costs is not None:
        costs = [float(c) for c in costs]
        if len(costs) != problem.T:
            raise ValueError(f"benchmark {name!r} has {problem.T} fidelities, got {len(costs)} costs")
        problem = BenchmarkProblem(problem.name, problem.domain, problem.evaluators, costs,
                                   problem.x_star, problem.f_star, problem.noise, problem.constraints)
    return problem
