# Module of classes for representing SCMA codebooks and the factor graph derived from them.
#
# A codebook assigns each of K users M sparse codewords of length N.  The zero pattern of a
# user's codewords (its signature) decides which resource elements it occupies, and the
# union of all signatures is the bipartite user/resource factor graph used by every detector.

import itertools
import json
import logging
import math

import networkx as nx
import numpy as np

# Tolerance on the unit average codeword energy of loaded codebooks
energy_tolerance = 1e-6

# The only supported bit labelling: natural binary with bit 0 most significant.
NATURAL = 'natural'


# Custom exception class for malformed or invalid codebooks
class CodebookException(RuntimeError): pass


# Return the M x J table of coded bits for every codeword index.
#   bit_table(2) -> [[0,0],[0,1],[1,0],[1,1]]
def bit_table(J: int) -> np.ndarray:
    indexes = np.arange(2 ** J)[:, None]
    shifts = np.arange(J - 1, -1, -1)[None, :]
    return (indexes >> shifts) & 1


def bits_to_index(bits) -> int:
    index = 0
    for bit in bits:
        index = (index << 1) | int(bit)
    return index


def index_to_bits(index: int, J: int) -> tuple:
    return tuple((index >> (J - 1 - j)) & 1 for j in range(J))


class Codebook:
    """Per-user sparse multidimensional constellations (K x M x N complex array)"""

    # Instantiate the object
    #   codewords is a K x M x N array-like of complex values
    #   regular is an optional (d_v, d_f) pair the codebook claims to satisfy
    #   label_order fixes the bit tuple -> codeword index convention
    # The constructor validates every invariant and raises CodebookException listing
    # all violated rules.
    def __init__(self, codewords, regular: tuple = None, label_order: str = NATURAL,
                 tolerance: float = None):
        self.codewords = np.array(codewords, dtype=complex)
        self.regular = tuple(regular) if regular is not None else None
        self.label_order = label_order
        self.validate(energy_tolerance if tolerance is None else tolerance)
        self.codewords.setflags(write=False)

    @property
    def K(self) -> int:
        return self.codewords.shape[0]

    @property
    def M(self) -> int:
        return self.codewords.shape[1]

    @property
    def N(self) -> int:
        return self.codewords.shape[2]

    @property
    def J(self) -> int:
        return int(math.log2(self.M))

    # Resource indices on which the user has a nonzero entry in any codeword
    def support(self, user: int) -> tuple:
        return tuple(int(n) for n in np.flatnonzero(np.any(self.codewords[user] != 0, axis=0)))

    # The M values user k can place on resource n
    def column(self, user: int, resource: int) -> np.ndarray:
        return self.codewords[user, :, resource]

    # Average codeword energy per user, (1/M) sum_m ||x_k^(m)||^2
    def energies(self) -> np.ndarray:
        return np.mean(np.sum(np.abs(self.codewords) ** 2, axis=2), axis=1)

    # Check every codebook invariant and raise a CodebookException naming each one violated.
    def validate(self, tolerance: float):
        if self.codewords.ndim != 3 or min(self.codewords.shape) < 1:
            raise CodebookException(f"dimensions: expected a K x M x N array, got shape {self.codewords.shape}")
        if self.label_order != NATURAL:
            raise CodebookException(f"label_order: unsupported convention '{self.label_order}'")

        problems = []
        if not np.all(np.isfinite(self.codewords)):
            problems.append("finite: codewords contain non-finite values")
        if self.M < 2 or self.M & (self.M - 1):
            problems.append(f"power-of-two: M = {self.M} is not a power of two >= 2")

        mask = self.codewords != 0
        bad_support = [k for k in range(self.K) if not np.all(mask[k] == np.any(mask[k], axis=0))]
        if bad_support:
            problems.append(f"support-pattern: users {bad_support} do not share one nonzero pattern across codewords")

        energies = self.energies()
        bad_energy = [k for k in range(self.K) if abs(energies[k] - 1.0) > tolerance]
        if bad_energy:
            listed = ', '.join(f"{k}: {energies[k]:.6g}" for k in bad_energy)
            problems.append(f"energy: users [{listed}] do not have unit average codeword energy")

        same = np.all(self.codewords[:, :, None, :] == self.codewords[:, None, :, :], axis=3)
        duplicated = [k for k in range(self.K) if np.count_nonzero(same[k]) > self.M]
        if duplicated:
            problems.append(f"distinct: users {duplicated} have repeated codewords")

        if self.regular and not bad_support:
            d_v, d_f = self.regular
            user_degrees = np.count_nonzero(np.any(mask, axis=1), axis=1)
            resource_degrees = np.count_nonzero(np.any(mask, axis=1), axis=0)
            if np.any(user_degrees != d_v) or np.any(resource_degrees != d_f):
                problems.append(f"regularity: codebook claims (d_v, d_f) = ({d_v}, {d_f}) but degrees are "
                                f"{user_degrees.tolist()} / {resource_degrees.tolist()}")

        if problems:
            raise CodebookException('; '.join(problems))

    # Return a dictionary in the codebook file schema
    def to_json(self) -> dict:
        data = {'K': self.K, 'N': self.N, 'M': self.M}
        if self.regular:
            data['d_v'], data['d_f'] = self.regular
        data['users'] = [
            {'codewords': [[[float(v.real), float(v.imag)] for v in word] for word in self.codewords[k]]}
            for k in range(self.K)
        ]
        return data

    # Build a codebook from a dictionary in the codebook file schema.
    @staticmethod
    def from_json(data: dict, tolerance: float = None):
        try:
            K, N, M = int(data['K']), int(data['N']), int(data['M'])
            users = data['users']
        except (KeyError, TypeError, ValueError) as err:
            raise CodebookException(f"parse: missing or invalid field {err}")

        try:
            codewords = Codebook._walk_users(users, K, M, N)
        except (TypeError, ValueError) as err:
            raise CodebookException(f"parse: malformed codeword data: {err}")

        if ('d_v' in data) != ('d_f' in data):
            raise CodebookException("parse: d_v and d_f must be given together")
        regular = None
        if 'd_v' in data:
            try:
                regular = (int(data['d_v']), int(data['d_f']))
            except (TypeError, ValueError) as err:
                raise CodebookException(f"parse: invalid degree field {err}")
        return Codebook(codewords, regular=regular, tolerance=tolerance)

    # K x M x N array from the 'users' list, checking its shape on the way
    @staticmethod
    def _walk_users(users, K: int, M: int, N: int) -> np.ndarray:
        if len(users) != K:
            raise CodebookException(f"dimensions: {len(users)} users listed but K = {K}")
        codewords = np.zeros((K, M, N), dtype=complex)
        for k, user in enumerate(users):
            words = user.get('codewords') if isinstance(user, dict) else None
            if words is None or len(words) != M:
                raise CodebookException(f"dimensions: user {k} must list M = {M} codewords")
            for m, word in enumerate(words):
                if len(word) != N:
                    raise CodebookException(f"dimensions: user {k} codeword {m} must have N = {N} entries")
                for n, pair in enumerate(word):
                    if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                        raise CodebookException(f"dimensions: user {k} codeword {m} entry {n} is not a [re, im] pair")
                    codewords[k, m, n] = complex(float(pair[0]), float(pair[1]))
        return codewords

    def __repr__(self):
        return f'Codebook(K={self.K}, N={self.N}, M={self.M}, J={self.J})'


# Read a codebook JSON file
def load_codebook(path) -> Codebook:
    try:
        with open(path, 'r') as stream:
            data = json.load(stream)
    except OSError as err:
        raise CodebookException(f"parse: unable to read {path}: {err}")
    except json.JSONDecodeError as err:
        raise CodebookException(f"parse: {path} is not valid JSON: {err}")

    try:
        cb = Codebook.from_json(data)
    except CodebookException as err:
        logging.warning(f"Rejected codebook {path}: {err}")
        raise
    logging.info(f"Loaded {cb} from {path}")
    return cb


# Write a codebook JSON file
def save_codebook(cb: Codebook, path):
    with open(path, 'w') as stream:
        json.dump(cb.to_json(), stream, indent=1)


# Deterministic regular codebook generator.
#
# Users take the N-choose-d_v signature patterns in lexicographic order (cycling when K is
# larger than the number of patterns).  On each active resource a user places an M-PSK
# constellation rotated by 2*pi*r/(M*d_f), r being the user's rank among the users of that
# resource, and each user is then scaled to unit average energy.
def default_codebook(K: int, N: int, M: int, d_v: int) -> Codebook:
    if M < 2 or M & (M - 1):
        raise CodebookException(f"infeasible: M = {M} is not a power of two >= 2")
    if K < 1 or N < 1 or not 1 <= d_v <= N:
        raise CodebookException(f"infeasible: need K >= 1 and 1 <= d_v <= N, got K={K}, N={N}, d_v={d_v}")
    if (K * d_v) % N:
        raise CodebookException(f"infeasible: d_f = K*d_v/N = {K}*{d_v}/{N} is not an integer")
    d_f = K * d_v // N

    patterns = list(itertools.combinations(range(N), d_v))
    signature = [patterns[k % len(patterns)] for k in range(K)]
    degrees = np.zeros(N, dtype=int)
    for pattern in signature:
        degrees[list(pattern)] += 1
    if np.any(degrees != d_f):
        raise CodebookException(f"infeasible: no regular ({d_v}, {d_f}) signature for K={K}, N={N} "
                                f"(resource degrees {degrees.tolist()})")

    psk = np.exp(2j * np.pi * np.arange(M) / M)
    codewords = np.zeros((K, M, N), dtype=complex)
    rank = np.zeros(N, dtype=int)
    for k, pattern in enumerate(signature):
        for n in pattern:
            codewords[k, :, n] = psk * np.exp(2j * np.pi * rank[n] / (M * d_f))
            rank[n] += 1
    energy = np.mean(np.sum(np.abs(codewords) ** 2, axis=2), axis=1)
    codewords /= np.sqrt(energy)[:, None, None]

    logging.info(f"Generated default codebook K={K}, N={N}, M={M}, d_v={d_v}, d_f={d_f}")
    return Codebook(codewords, regular=(d_v, d_f))


# Map a J-tuple of coded bits to the user's codeword (bit 0 most significant)
def encode(bits, user: int, cb: Codebook) -> np.ndarray:
    if len(bits) != cb.J:
        raise CodebookException(f"encode: expected {cb.J} bits, got {len(bits)}")
    if any(int(bit) not in (0, 1) for bit in bits):
        raise CodebookException(f"encode: bits must be 0 or 1, got {tuple(bits)}")
    if not 0 <= user < cb.K:
        raise CodebookException(f"encode: user {user} out of range 0..{cb.K - 1}")
    return cb.codewords[user, bits_to_index(bits)].copy()


class FactorGraph:
    """User/resource adjacency of a codebook, held as a networkx bipartite graph"""

    def __init__(self, graph: nx.Graph, K: int, N: int):
        self.graph = graph
        self.K = K
        self.N = N
        # V(k): resources of user k, F(n): users of resource n, both in ascending order
        self.V = tuple(tuple(sorted(n for _, n in graph.neighbors(('user', k)))) for k in range(K))
        self.F = tuple(tuple(sorted(k for _, k in graph.neighbors(('resource', n)))) for n in range(N))
        self.d_v = np.array([len(v) for v in self.V])
        self.d_f = np.array([len(f) for f in self.F])

    # All (user, resource) edges, ordered by user then resource
    def edges(self) -> list:
        return [(k, n) for k in range(self.K) for n in self.V[k]]

    # True when the graph has no cycles, in which case sum-product is exact
    def is_tree(self) -> bool:
        return nx.is_forest(self.graph)

    def __repr__(self):
        return f'FactorGraph(K={self.K}, N={self.N}, edges={self.graph.number_of_edges()})'


# Derive V(k) and F(n) from the shared support patterns of the codebook
def build_factor_graph(cb: Codebook) -> FactorGraph:
    graph = nx.Graph()
    graph.add_nodes_from((('user', k) for k in range(cb.K)), bipartite=0)
    graph.add_nodes_from((('resource', n) for n in range(cb.N)), bipartite=1)
    for k in range(cb.K):
        graph.add_edges_from((('user', k), ('resource', n)) for n in cb.support(k))

    return FactorGraph(graph, cb.K, cb.N)
