#!/usr/bin/env python3
"""Builds golden_network.json: a hand-specified 14-variable accident network
whose Congestion CPT is solved so four reference scenarios hit fixed
posteriors exactly. Re-run only to regenerate the fixture."""
import itertools
import json
import math
import pathlib

HERE = pathlib.Path(__file__).resolve().parent

V = {}  # name -> (states, parents, cpt rows)


def var(name, states, parents=(), rows=None):
    V[name] = (list(states), list(parents), rows)


var("Day_Night", ["Day", "Night"], rows=[[0.7, 0.3]])
var("Weekday", ["Weekday", "Weekend"], rows=[[0.72, 0.28]])
var("Temperature", ["cold", "mild", "hot"], rows=[[0.25, 0.5, 0.25]])
var("Wind", ["calm", "windy"], rows=[[0.8, 0.2]])
var("Junction", ["No", "Yes"], rows=[[0.7, 0.3]])
var("Peak_Hours", ["AM Peak", "PM Peak", "OFF Peak"], ["Day_Night", "Weekday"],
    [[0.3, 0.35, 0.35], [0.1, 0.15, 0.75], [0.15, 0.05, 0.8], [0.05, 0.05, 0.9]])
var("Precipitation", ["none", "light", "heavy"], ["Temperature"],
    [[0.6, 0.3, 0.1], [0.75, 0.2, 0.05], [0.85, 0.1, 0.05]])
var("Severe_Weather", ["No", "Yes"], ["Precipitation", "Wind"],
    [[0.98, 0.02], [0.9, 0.1], [0.85, 0.15], [0.7, 0.3], [0.5, 0.5], [0.3, 0.7]])
var("Visibility", ["good", "poor"], ["Precipitation", "Day_Night"],
    [[0.95, 0.05], [0.8, 0.2], [0.8, 0.2], [0.6, 0.4], [0.55, 0.45], [0.35, 0.65]])
var("Traffic_Signal", ["No", "Yes"], ["Junction"], [[0.8, 0.2], [0.35, 0.65]])
var("Crossing", ["No", "Yes"], ["Junction"], [[0.9, 0.1], [0.55, 0.45]])
var("Severity", ["Minor", "Moderate", "Severe", "Fatal"], ["Visibility", "Severe_Weather"],
    [[0.55, 0.3, 0.12, 0.03], [0.4, 0.33, 0.19, 0.08], [0.42, 0.32, 0.18, 0.08], [0.3, 0.3, 0.25, 0.15]])
var("Accident_Duration", ["very short", "short", "moderate", "long"], ["Severity"],
    [[0.35, 0.35, 0.2, 0.1], [0.25, 0.3, 0.3, 0.15], [0.12, 0.23, 0.35, 0.3], [0.05, 0.15, 0.35, 0.45]])

# Congestion: logistic base over its four parents, then one row per scenario
# is solved so the scenario posterior is exact.
CONG_PARENTS = ["Severity", "Junction", "Peak_Hours", "Accident_Duration"]
SEV = {"Minor": 0.0, "Moderate": 0.6, "Severe": 1.3, "Fatal": 2.0}
JUN = {"No": 0.0, "Yes": 3.5}
PEAK = {"AM Peak": 1.0, "PM Peak": 1.0, "OFF Peak": 0.0}
DUR = {"very short": -0.6, "short": 0.0, "moderate": 0.5, "long": 1.2}
cong_rows = []
for combo in itertools.product(*(V[p][0] for p in CONG_PARENTS)):
    s, j, pk, d = combo
    high = 1.0 / (1.0 + math.exp(-(-1.2 + SEV[s] + JUN[j] + PEAK[pk] + DUR[d])))
    cong_rows.append([1.0 - high, high])
var("Congestion", ["Low", "High"], CONG_PARENTS, cong_rows)

ORDER = ["Day_Night", "Weekday", "Temperature", "Wind", "Junction", "Peak_Hours", "Precipitation",
         "Severe_Weather", "Visibility", "Traffic_Signal", "Crossing", "Severity", "Accident_Duration",
         "Congestion"]
assert len(ORDER) == 14 and set(ORDER) == set(V)


def row_index(name, assignment):
    states, parents, _ = V[name]
    idx = 0
    for p in parents:  # last parent fastest
        idx = idx * len(V[p][0]) + assignment[p]
    return idx


def posterior_high(evidence):
    num = den = 0.0
    names = ORDER
    fixed = {k: V[k][0].index(v) for k, v in evidence.items()}
    free = [n for n in names if n not in fixed]
    for values in itertools.product(*(range(len(V[n][0])) for n in free)):
        a = dict(fixed)
        a.update(zip(free, values))
        p = 1.0
        for n in names:
            p *= V[n][2][row_index(n, a)][a[n]]
        den += p
        if a["Congestion"] == 1:
            num += p
    return num / den


def cong_row(sev, jun, peak, dur):
    a = {"Severity": V["Severity"][0].index(sev), "Junction": V["Junction"][0].index(jun),
         "Peak_Hours": V["Peak_Hours"][0].index(peak), "Accident_Duration": V["Accident_Duration"][0].index(dur)}
    return row_index("Congestion", a)


SCENARIOS = [
    ("scenario_1", {"Severity": "Minor", "Crossing": "Yes", "Peak_Hours": "OFF Peak", "Accident_Duration": "moderate"},
     0.4808, [("Minor", "Yes", "OFF Peak", "moderate"), ("Minor", "No", "OFF Peak", "moderate")]),
    ("scenario_2", {"Severity": "Fatal", "Crossing": "Yes", "Peak_Hours": "OFF Peak", "Accident_Duration": "moderate"},
     0.7988, [("Fatal", "Yes", "OFF Peak", "moderate"), ("Fatal", "No", "OFF Peak", "moderate")]),
    ("scenario_3", {"Junction": "No", "Crossing": "Yes", "Peak_Hours": "AM Peak", "Accident_Duration": "very short"},
     0.4826, [("Minor", "No", "AM Peak", "very short"), ("Moderate", "No", "AM Peak", "very short")]),
    ("scenario_4", {"Junction": "Yes", "Crossing": "Yes", "Peak_Hours": "AM Peak", "Accident_Duration": "very short"},
     0.9812, [("Minor", "Yes", "AM Peak", "very short"), ("Moderate", "Yes", "AM Peak", "very short")]),
]

rows = V["Congestion"][2]
for name, ev, target, candidates in SCENARIOS:
    for cand in candidates:
        r = cong_row(*cand)
        rows[r] = [1.0, 0.0]
        a = posterior_high(ev)
        rows[r] = [0.0, 1.0]
        b = posterior_high(ev) - a
        theta = (target - a) / b
        if 0.02 <= theta <= 0.98:
            rows[r] = [1.0 - theta, theta]
            break
    else:
        raise SystemExit(f"{name}: no feasible free row")
    print(name, cand, f"theta={theta:.6f}", f"posterior={posterior_high(ev):.10f}")

net = {"format": "congestion-bayesnet", "version": 1, "variables": [
    {"name": n, "states": V[n][0], "parents": V[n][1], "cpt": V[n][2]} for n in ORDER]}
(HERE / "golden_network.json").write_text(json.dumps(net, indent=1) + "\n")
scen = {"scenarios": [{"name": n, "evidence": ev} for n, ev, _, _ in SCENARIOS]}
(HERE.parent / "scenarios" / "bn_scenarios.json").write_text(json.dumps(scen, indent=2) + "\n")
