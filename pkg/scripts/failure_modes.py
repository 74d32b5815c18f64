"""One gradient step on each 2-D failure-mode configuration.

Prints, for the query point, the component of its displacement pointing away
from the hard-negative cluster: positive means away, negative means into it.
"""

from liftedstruct.experiments import away_component, baselines_for, failure_cases, step_displacement


def main():
    for case in failure_cases():
        print(f"{case.name} configuration, cluster centroid {case.centroid.round(3).tolist()}")
        for method in ("lifted-smooth",) + baselines_for(case):
            d = step_displacement(case, method)
            print(f"  {method:14s} step {d.round(4).tolist()}  away component {away_component(case, d):+.4f}")


if __name__ == "__main__":
    main()
