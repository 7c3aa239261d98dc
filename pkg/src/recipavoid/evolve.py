"""Speciated topology-and-weight neuroevolution for the maneuver network.

The evolved network maps four frame-invariant relative-state inputs to three
outputs: a speed delta, a deviation angle, and a strategy selector. Structure
and weights evolve together; structurally matching genes are aligned through
globally unique innovation ids, and the population is partitioned into
species by structural similarity so novel topologies get time to mature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kinematics import UavState
from .maneuver import MAX_DEVIATION, MAX_SPEED_DELTA

N_INPUTS = 4
N_OUTPUTS = 3
INPUT_IDS = tuple(range(N_INPUTS))
OUTPUT_IDS = tuple(range(N_INPUTS, N_INPUTS + N_OUTPUTS))

POSITION_SCALE = 200.0  # m, the maximum detection range
VELOCITY_SCALE_FACTOR = 4.0  # relative speeds normalized by 4x cruise speed


def encode_inputs(own: UavState, other: UavState, cruise_speed: float = 16.67) -> np.ndarray:
    """Relative state of the peer expressed in the deciding vehicle's frame.

    The world is rotated so the deciding vehicle's velocity points along +x,
    which makes the encoding invariant to global rotation and translation and
    therefore computable identically by both vehicles. Components are
    normalized and clamped to [-1, 1].
    """
    speed = own.speed
    if speed <= 0.0:
        raise ValueError("encoding frame undefined for a vehicle with zero speed")
    c = own.velocity[0] / speed
    s = own.velocity[1] / speed
    rot = np.array([[c, s], [-s, c]])
    dp = rot @ (other.position - own.position)
    dv = rot @ (other.velocity - own.velocity)
    raw = np.concatenate((dp / POSITION_SCALE, dv / (VELOCITY_SCALE_FACTOR * cruise_speed)))
    return np.clip(raw, -1.0, 1.0)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass
class NodeGene:
    id: int
    role: str  # input | output | hidden
    activation: str  # identity | sigmoid | tanh


@dataclass
class ConnectionGene:
    innovation: int
    source: int
    target: int
    weight: float
    enabled: bool = True


class Genome:
    """Feed-forward network genome with innovation-tagged connections."""

    _counter = 0

    def __init__(self, nodes: list[NodeGene], connections: list[ConnectionGene]):
        self.nodes = nodes
        self.connections = connections
        self.fitness: float | None = None
        self._order: list[int] | None = None
        Genome._counter += 1
        self.uid = Genome._counter  # stable tie-break key inside one run

    def copy(self) -> "Genome":
        g = Genome(
            [replace(n) for n in self.nodes],
            [replace(c) for c in self.connections],
        )
        g.fitness = self.fitness
        return g

    def node_ids(self) -> set[int]:
        return {n.id for n in self.nodes}

    def _toposort(self) -> list[int]:
        if self._order is not None:
            return self._order
        ids = [n.id for n in self.nodes]
        incoming = {i: 0 for i in ids}
        adjacency: dict[int, list[int]] = {i: [] for i in ids}
        for c in self.connections:
            if c.enabled:
                adjacency[c.source].append(c.target)
                incoming[c.target] += 1
        ready = sorted(i for i in ids if incoming[i] == 0)
        order = []
        while ready:
            node = ready.pop(0)
            order.append(node)
            for nxt in sorted(adjacency[node]):
                incoming[nxt] -= 1
                if incoming[nxt] == 0:
                    ready.append(nxt)
            ready.sort()
        if len(order) != len(ids):
            raise ValueError("genome connectivity contains a cycle")
        self._order = order
        return order

    def forward(self, inputs) -> tuple[float, float, float]:
        """Evaluate the network: (speed delta [m/s], deviation [rad], selector)."""
        inputs = np.asarray(inputs, dtype=float)
        if inputs.shape != (N_INPUTS,):
            raise ValueError(f"expected {N_INPUTS} inputs")
        order = self._toposort()
        by_id = {n.id: n for n in self.nodes}
        incoming: dict[int, list[ConnectionGene]] = {n.id: [] for n in self.nodes}
        for c in self.connections:
            if c.enabled:
                incoming[c.target].append(c)
        values: dict[int, float] = {}
        for nid in order:
            node = by_id[nid]
            if node.role == "input":
                values[nid] = float(inputs[nid])
                continue
            total = sum(c.weight * values[c.source] for c in incoming[nid])
            values[nid] = math.tanh(total) if node.activation == "tanh" else _sigmoid(total)
        out = [values[i] for i in OUTPUT_IDS]
        return out[0] * MAX_SPEED_DELTA, out[1] * MAX_DEVIATION, out[2]

    # model protocol shared with the constant baseline models
    def activate(self, inputs) -> tuple[float, float, float]:
        return self.forward(inputs)


def base_nodes() -> list[NodeGene]:
    nodes = [NodeGene(i, "input", "identity") for i in INPUT_IDS]
    nodes += [NodeGene(i, "output", "sigmoid") for i in OUTPUT_IDS]
    return nodes


class InnovationTracker:
    """Global innovation and node-id bookkeeping for one evolutionary run.

    Identical structural mutations discovered within one generation must map
    to the same innovation ids so crossover can align them.
    """

    def __init__(self):
        self.next_innovation = N_INPUTS * N_OUTPUTS  # base genome uses 0..11
        self.next_node_id = N_INPUTS + N_OUTPUTS
        self._conn_registry: dict[tuple[int, int], int] = {}
        self._split_registry: dict[int, tuple[int, int, int]] = {}

    def begin_generation(self):
        self._conn_registry.clear()
        self._split_registry.clear()

    def connection_innovation(self, source: int, target: int) -> int:
        key = (source, target)
        if key not in self._conn_registry:
            self._conn_registry[key] = self.next_innovation
            self.next_innovation += 1
        return self._conn_registry[key]

    def split_innovations(self, connection_innovation: int) -> tuple[int, int, int]:
        if connection_innovation not in self._split_registry:
            node_id = self.next_node_id
            self.next_node_id += 1
            self._split_registry[connection_innovation] = (
                node_id,
                self.next_innovation,
                self.next_innovation + 1,
            )
            self.next_innovation += 2
        return self._split_registry[connection_innovation]


@dataclass
class EvolutionConfig:
    population: int = 100
    generations: int = 30
    weight_perturb_prob: float = 0.8
    weight_sigma: float = 0.5
    add_connection_prob: float = 0.05
    add_node_prob: float = 0.03
    crossover_prob: float = 0.75
    compat_threshold: float = 2.0
    compat_topology_coef: float = 1.0
    compat_weight_coef: float = 0.5
    elite_fraction: float = 0.1
    survival_fraction: float = 0.5
    stagnation_limit: int = 5
    seed: int = 0

    def validate(self):
        if self.population < 2:
            raise ValueError("population must hold at least two genomes")
        rates = (
            self.weight_perturb_prob,
            self.add_connection_prob,
            self.add_node_prob,
            self.crossover_prob,
            self.elite_fraction,
            self.survival_fraction,
        )
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ValueError("rates must lie in [0, 1]")


def initial_genome(rng: np.random.Generator, sigma: float = 1.0) -> Genome:
    """Fully connected input-to-output genome with random weights."""
    connections = []
    innovation = 0
    for src in INPUT_IDS:
        for tgt in OUTPUT_IDS:
            connections.append(
                ConnectionGene(innovation, src, tgt, float(rng.normal(0.0, sigma)))
            )
            innovation += 1
    return Genome(base_nodes(), connections)


def _creates_cycle(genome: Genome, source: int, target: int) -> bool:
    # would adding source->target close a directed loop?
    adjacency: dict[int, list[int]] = {n.id: [] for n in genome.nodes}
    for c in genome.connections:
        if c.enabled:
            adjacency[c.source].append(c.target)
    stack = [target]
    seen = set()
    while stack:
        node = stack.pop()
        if node == source:
            return True
        if node in seen:
            continue
        seen.add(node)
        stack.extend(adjacency[node])
    return False


def mutate(
    genome: Genome,
    config: EvolutionConfig,
    rng: np.random.Generator,
    tracker: InnovationTracker,
) -> Genome:
    """Return a mutated copy: weight perturbation plus structural changes."""
    child = genome.copy()
    child.fitness = None
    for conn in child.connections:
        if rng.random() < config.weight_perturb_prob:
            conn.weight += float(rng.normal(0.0, config.weight_sigma))

    if rng.random() < config.add_connection_prob:
        sources = [n.id for n in child.nodes if n.role != "output"]
        targets = [n.id for n in child.nodes if n.role != "input"]
        existing = {(c.source, c.target) for c in child.connections}
        for _ in range(10):
            src = int(rng.choice(sources))
            tgt = int(rng.choice(targets))
            if src == tgt or (src, tgt) in existing or _creates_cycle(child, src, tgt):
                continue
            child.connections.append(
                ConnectionGene(
                    tracker.connection_innovation(src, tgt),
                    src,
                    tgt,
                    float(rng.normal(0.0, config.weight_sigma)),
                )
            )
            break

    if rng.random() < config.add_node_prob:
        enabled = [c for c in child.connections if c.enabled]
        if enabled:
            conn = enabled[int(rng.integers(len(enabled)))]
            conn.enabled = False
            node_id, innov_in, innov_out = tracker.split_innovations(conn.innovation)
            child.nodes.append(NodeGene(node_id, "hidden", "tanh"))
            child.connections.append(ConnectionGene(innov_in, conn.source, node_id, 1.0))
            child.connections.append(
                ConnectionGene(innov_out, node_id, conn.target, conn.weight)
            )
    child._order = None
    return child


def crossover(a: Genome, b: Genome, rng: np.random.Generator) -> Genome:
    """Innovation-aligned recombination; unmatched genes come from the fitter parent."""
    fa = a.fitness if a.fitness is not None else math.inf
    fb = b.fitness if b.fitness is not None else math.inf
    # lower fitness is better (it is a detection range in meters)
    fitter, other = (a, b) if (fa, a.uid) <= (fb, b.uid) else (b, a)
    other_by_innov = {c.innovation: c for c in other.connections}
    connections = []
    for gene in fitter.connections:
        match = other_by_innov.get(gene.innovation)
        if match is None:
            connections.append(replace(gene))
            continue
        chosen = gene if rng.random() < 0.5 else match
        enabled = gene.enabled and match.enabled
        if gene.enabled != match.enabled:
            enabled = rng.random() >= 0.75
        connections.append(replace(chosen, enabled=enabled))
    nodes_by_id = {n.id: n for n in fitter.nodes}
    for n in other.nodes:
        nodes_by_id.setdefault(n.id, n)
    used = {i for i in INPUT_IDS} | {i for i in OUTPUT_IDS}
    for c in connections:
        used.add(c.source)
        used.add(c.target)
    nodes = [replace(nodes_by_id[i]) for i in sorted(used)]
    return Genome(nodes, connections)


def compatibility_distance(a: Genome, b: Genome, config: EvolutionConfig) -> float:
    innovations_a = {c.innovation: c for c in a.connections}
    innovations_b = {c.innovation: c for c in b.connections}
    matching = innovations_a.keys() & innovations_b.keys()
    mismatched = len(innovations_a) + len(innovations_b) - 2 * len(matching)
    size = max(len(innovations_a), len(innovations_b), 1)
    weight_gap = 0.0
    if matching:
        weight_gap = sum(
            abs(innovations_a[i].weight - innovations_b[i].weight) for i in matching
        ) / len(matching)
    return (
        config.compat_topology_coef * mismatched / size
        + config.compat_weight_coef * weight_gap
    )


def speciate(
    population: list[Genome], threshold: float, config: EvolutionConfig | None = None
) -> list[list[Genome]]:
    """Partition genomes into species by compatibility with a representative."""
    config = config or EvolutionConfig()
    species: list[list[Genome]] = []
    for genome in population:
        for members in species:
            if compatibility_distance(genome, members[0], config) <= threshold:
                members.append(genome)
                break
        else:
            species.append([genome])
    return species


@dataclass
class GenerationStats:
    generation: int
    best: float
    mean: float
    best_ever: float
    species: int


@dataclass
class _SpeciesRecord:
    representative: Genome
    members: list[Genome] = field(default_factory=list)
    best: float = math.inf
    stale: int = 0


def _allocate(weights: list[float], total: int) -> list[int]:
    """Largest-remainder apportionment; deterministic for equal weights."""
    wsum = sum(weights)
    if wsum <= 0.0:
        weights = [1.0] * len(weights)
        wsum = float(len(weights))
    raw = [w / wsum * total for w in weights]
    counts = [int(r) for r in raw]
    remainder = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def evolve(
    config: EvolutionConfig,
    fitness_fn,
    on_generation=None,
) -> tuple[Genome, list[GenerationStats]]:
    """Run the generational loop and return the best-ever genome plus history.

    ``fitness_fn`` maps a genome to a scalar cost in meters (lower is better)
    and must be deterministic; all randomness flows from ``config.seed``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    tracker = InnovationTracker()
    population = [initial_genome(rng) for _ in range(config.population)]
    species_records: list[_SpeciesRecord] = []
    best_ever: Genome | None = None
    history: list[GenerationStats] = []

    for generation in range(config.generations):
        for genome in population:
            if genome.fitness is None:
                genome.fitness = float(fitness_fn(genome))
        population.sort(key=lambda g: (g.fitness, g.uid))
        if best_ever is None or population[0].fitness < best_ever.fitness:
            best_ever = population[0].copy()
        stats = GenerationStats(
            generation=generation,
            best=population[0].fitness,
            mean=float(np.mean([g.fitness for g in population])),
            best_ever=best_ever.fitness,
            species=len(species_records) or 1,
        )

        # assign genomes to persistent species by representative distance
        for record in species_records:
            record.members = []
        for genome in population:
            for record in species_records:
                if (
                    compatibility_distance(genome, record.representative, config)
                    <= config.compat_threshold
                ):
                    record.members.append(genome)
                    break
            else:
                species_records.append(_SpeciesRecord(representative=genome, members=[genome]))
        species_records = [r for r in species_records if r.members]
        for record in species_records:
            record.members.sort(key=lambda g: (g.fitness, g.uid))
            record.representative = record.members[0]
            if record.members[0].fitness < record.best - 1e-12:
                record.best = record.members[0].fitness
                record.stale = 0
            else:
                record.stale += 1
        stats.species = len(species_records)
        history.append(stats)
        if on_generation is not None:
            on_generation(stats)
        if generation == config.generations - 1:
            break

        # reproduction: fitness sharing across species, elites kept verbatim
        eligible = [
            r
            for r in species_records
            if r.stale < config.stagnation_limit or r.members[0].fitness <= best_ever.fitness
        ]
        if not eligible:
            eligible = species_records
        cap = 2.0 * POSITION_SCALE  # the everything-fails penalty bounds the cost
        shares = [
            sum(max(cap - g.fitness, 0.0) for g in r.members) / len(r.members)
            for r in eligible
        ]
        quotas = _allocate(shares, config.population - 1)
        next_population = [best_ever.copy()]
        tracker.begin_generation()
        for record, quota in zip(eligible, quotas):
            if quota == 0:
                continue
            members = record.members
            n_parents = max(1, int(math.ceil(config.survival_fraction * len(members))))
            parents = members[:n_parents]
            n_elite = min(quota, max(1, int(config.elite_fraction * len(members))))
            for elite in members[:n_elite]:
                next_population.append(elite.copy())
            for _ in range(quota - n_elite):
                mother = parents[int(rng.integers(len(parents)))]
                if len(parents) > 1 and rng.random() < config.crossover_prob:
                    father = parents[int(rng.integers(len(parents)))]
                    child = crossover(mother, father, rng)
                else:
                    child = mother.copy()
                next_population.append(mutate(child, config, rng, tracker))
        while len(next_population) < config.population:
            next_population.append(mutate(population[0], config, rng, tracker))
        population = next_population[: config.population]

    return best_ever, history


GENOME_FILE_TAG = "recipavoid-genome v1"


def save_genome(genome: Genome, path):
    """Serialize to versioned structured text; weights keep full precision."""
    lines = [GENOME_FILE_TAG]
    for n in sorted(genome.nodes, key=lambda n: n.id):
        lines.append(f"node {n.id} {n.role} {n.activation}")
    for c in sorted(genome.connections, key=lambda c: c.innovation):
        lines.append(
            f"conn {c.innovation} {c.source} {c.target} {c.weight!r} {int(c.enabled)}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_genome(path) -> Genome:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != GENOME_FILE_TAG:
        raise ValueError(f"not a recognized genome file: {path}")
    nodes, connections = [], []
    for line in lines[1:]:
        parts = line.split()
        if parts[0] == "node":
            nodes.append(NodeGene(int(parts[1]), parts[2], parts[3]))
        elif parts[0] == "conn":
            connections.append(
                ConnectionGene(
                    int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4]),
                    bool(int(parts[5])),
                )
            )
        else:
            raise ValueError(f"unknown genome record: {parts[0]}")
    return Genome(nodes, connections)
