"""Two paths sharing a link: how one measurement informs the other path.

p1 runs over l1 and l2, p2 over l2 and l3. A failed probe on p1 at a low
rate says "some link of p1 is slow". The shared link l2 is one candidate,
so p2's belief drops too, though by less than p1's.
"""

from pabest.belief import RateGrid, credible_interval, median
from pabest.graph import build
from pabest.likelihood import LikelihoodModel
from pabest.topology import parse_topology

TOPOLOGY = """
links: l1 l2 l3
paths:
p1 h1 h2 : l1 l2
p2 h3 h4 : l2 l3
"""


def show(g, label):
    print(label)
    for p in ("p1", "p2"):
        m = g.path_marginal(p)
        ci = credible_interval(m, 0.95)
        print(f"  {p}: median {median(m):5.1f}  95% interval [{ci.lower:g}, {ci.upper:g}]")
    m = g.link_marginal("l2")
    print(f"  shared link l2: median {median(m):5.1f}")


t = parse_topology(TOPOLOGY)
g = build(t, RateGrid(1, 100, 1))
g.run_bp()
show(g, "prior only (min of two uniform links):")

model = LikelihoodModel()
g.add_observation("p1", 30, 0, model)   # probe at 30 Mbps failed
report = g.run_bp()
show(g, f"\nafter a failed 30 Mbps probe on p1 (BP rounds: {report.rounds}):")

g.add_observation("p2", 60, 1, model)   # probe at 60 Mbps on p2 succeeded
g.run_bp()
show(g, "\nafter a successful 60 Mbps probe on p2:")
print("\np2 is fast, so l2 is fast and the blame on p1 shifts to l1.")
