"""Block partitioning of Voronoi cells, ghost layers and halo exchange.

Ranks are emulated in-process: every rank owns a contiguous slice of the
unknowns and only ever sees off-rank data through explicit halo buffers that
pass through a mailbox, mirroring point-to-point message passing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .complex import SimplicialComplex


@dataclass(frozen=True)
class PartitionPlan:
    n_cells: int
    n_ranks: int
    starts: tuple  # 0-based first cell of each rank
    sizes: tuple

    @property
    def ranges(self) -> list:
        """Inclusive 1-based index ranges, as printed in partition reports."""
        return [(s + 1, s + n) for s, n in zip(self.starts, self.sizes)]

    def owner(self, cells) -> np.ndarray:
        cells = np.asarray(cells)
        return np.searchsorted(np.asarray(self.starts), cells, side="right") - 1

    def report(self) -> str:
        ranks = " | ".join(f"{r:>7d}" for r in range(self.n_ranks))
        sizes = " | ".join(f"{n:>7d}" for n in self.sizes)
        rngs = " | ".join(f"{f'{a}-{b}':>7s}" for a, b in self.ranges)
        return (
            f"Rank                          | {ranks}\n"
            f"Number of local Voronoi cells | {sizes}\n"
            f"Local Voronoi cell indices    | {rngs}"
        )


def block_partition(n_cells: int, n_ranks: int) -> PartitionPlan:
    """Equal contiguous blocks; the first ``n_cells % n_ranks`` ranks get one extra."""
    if n_ranks < 1:
        raise ValueError("n_ranks must be >= 1")
    if n_ranks > n_cells:
        raise ValueError(f"cannot split {n_cells} cells over {n_ranks} ranks")
    q, r = divmod(n_cells, n_ranks)
    sizes = tuple(q + 1 if k < r else q for k in range(n_ranks))
    starts = tuple(int(s) for s in np.concatenate([[0], np.cumsum(sizes)[:-1]]))
    return PartitionPlan(n_cells, n_ranks, starts, sizes)


def tet_owners(complex_: SimplicialComplex, plan: PartitionPlan) -> np.ndarray:
    """A tetrahedron belongs to the rank owning its lowest-numbered node."""
    return plan.owner(complex_.tets.min(axis=1))


def face_owners(complex_: SimplicialComplex, tet_owner: np.ndarray) -> np.ndarray:
    """Interface faces go to the lower of the two adjacent ranks."""
    ft = complex_.face_tets
    own = tet_owner[ft[:, 0]]
    two = ft[:, 1] >= 0
    own[two] = np.minimum(own[two], tet_owner[ft[two, 1]])
    return own


@dataclass
class LocalSubcomplex:
    """One rank's view: owned cells first, then ghosts, in global-id order.

    Schedules map neighbour rank -> local positions; ``*_send[q]`` lists owned
    entries that rank q holds as ghosts, ``*_recv[q]`` the ghost slots filled
    from rank q, both ordered by global id so the pair lines up.
    """

    rank: int
    n_ranks: int
    faces: np.ndarray  # local -> global face ids
    tets: np.ndarray  # local -> global tet ids
    n_owned_faces: int
    n_owned_tets: int
    nodes: np.ndarray  # global node ids touched by local tets
    owned_nodes: np.ndarray
    face_send: dict = field(default_factory=dict)
    face_recv: dict = field(default_factory=dict)
    tet_send: dict = field(default_factory=dict)
    tet_recv: dict = field(default_factory=dict)

    @property
    def owned_faces(self) -> np.ndarray:
        return self.faces[: self.n_owned_faces]

    @property
    def ghost_faces(self) -> np.ndarray:
        return self.faces[self.n_owned_faces:]

    @property
    def owned_tets(self) -> np.ndarray:
        return self.tets[: self.n_owned_tets]

    @property
    def ghost_tets(self) -> np.ndarray:
        return self.tets[self.n_owned_tets:]

    @property
    def neighbours(self) -> list:
        return sorted(set(self.face_send) | set(self.face_recv) | set(self.tet_send) | set(self.tet_recv))

    def unknowns(self, n_faces: int) -> np.ndarray:
        """Global unknown ids (faces, then tets offset by n_faces): owned, then ghost."""
        of, ot = self.n_owned_faces, self.n_owned_tets
        return np.concatenate([self.faces[:of], n_faces + self.tets[:ot], self.faces[of:], n_faces + self.tets[ot:]])

    @property
    def n_owned(self) -> int:
        return self.n_owned_faces + self.n_owned_tets


def _schedule(local_ids, n_owned, owner_of, rank, ghost_users):
    """Build send/recv position lists for one entity kind."""
    recv = {}
    ghosts = local_ids[n_owned:]
    gown = owner_of[ghosts]
    for q in np.unique(gown):
        recv[int(q)] = n_owned + np.flatnonzero(gown == q)
    send = {}
    pos = {int(g): i for i, g in enumerate(local_ids[:n_owned])}
    for q, ids in ghost_users.items():
        if q != rank and len(ids):
            send[int(q)] = np.array([pos[int(g)] for g in ids], dtype=np.int64)
    return send, recv


def build_partition(complex_: SimplicialComplex, plan: PartitionPlan) -> list:
    """Local sub-complexes for every rank (desk scale: global mesh seen by all)."""
    if plan.n_cells != complex_.n_nodes:
        raise ValueError("partition plan does not match the number of Voronoi cells (mesh nodes)")
    towner = tet_owners(complex_, plan)
    fowner = face_owners(complex_, towner)
    ft = complex_.face_tets
    tf = complex_.tet_faces

    per_rank = []
    for r in range(plan.n_ranks):
        own_t = np.flatnonzero(towner == r)
        own_f = np.flatnonzero(fowner == r)
        touched_f = np.unique(tf[own_t].ravel())
        ghost_f = touched_f[fowner[touched_f] != r]
        # only faces this rank owns read tet values from across the interface
        nbr = ft[own_f].ravel()
        nbr = np.unique(nbr[nbr >= 0])
        ghost_t = nbr[towner[nbr] != r]
        per_rank.append((own_f, ghost_f, own_t, ghost_t))

    # who holds which of my owned entities as ghosts
    face_users = [dict() for _ in range(plan.n_ranks)]
    tet_users = [dict() for _ in range(plan.n_ranks)]
    for q, (_, ghost_f, _, ghost_t) in enumerate(per_rank):
        for g_own in np.unique(fowner[ghost_f]):
            face_users[int(g_own)][q] = ghost_f[fowner[ghost_f] == g_own]
        for g_own in np.unique(towner[ghost_t]):
            tet_users[int(g_own)][q] = ghost_t[towner[ghost_t] == g_own]

    subs = []
    for r, (own_f, ghost_f, own_t, ghost_t) in enumerate(per_rank):
        faces = np.concatenate([own_f, ghost_f])
        tets = np.concatenate([own_t, ghost_t])
        fs, fr = _schedule(faces, len(own_f), fowner, r, face_users[r])
        ts, tr = _schedule(tets, len(own_t), towner, r, tet_users[r])
        lo, n = plan.starts[r], plan.sizes[r]
        subs.append(
            LocalSubcomplex(
                rank=r,
                n_ranks=plan.n_ranks,
                faces=faces,
                tets=tets,
                n_owned_faces=len(own_f),
                n_owned_tets=len(own_t),
                nodes=np.unique(complex_.tets[tets].ravel()),
                owned_nodes=np.arange(lo, lo + n),
                face_send=fs,
                face_recv=fr,
                tet_send=ts,
                tet_recv=tr,
            )
        )
    return subs


def build_local(complex_: SimplicialComplex, plan: PartitionPlan, rank: int) -> LocalSubcomplex:
    if not 0 <= rank < plan.n_ranks:
        raise ValueError(f"rank {rank} out of range for {plan.n_ranks} ranks")
    return build_partition(complex_, plan)[rank]


class HaloError(RuntimeError):
    pass


class Mailbox:
    """Point-to-point message store keyed by (source, destination, tag)."""

    def __init__(self):
        self._box = {}

    def send(self, src: int, dst: int, tag: str, buf: np.ndarray):
        self._box[(src, dst, tag)] = np.array(buf, copy=True)

    def recv(self, src: int, dst: int, tag: str) -> np.ndarray:
        try:
            return self._box.pop((src, dst, tag))
        except KeyError:
            raise HaloError(f"rank {dst} expected a '{tag}' message from rank {src}") from None

    def empty(self) -> bool:
        return not self._box


def exchange(values: list, sends: list, recvs: list, tag: str, box: Mailbox | None = None) -> list:
    """Collective ghost refresh for arbitrary per-rank send/recv schedules."""
    box = box or Mailbox()
    for r, send in enumerate(sends):
        for q in sorted(send):
            box.send(r, q, tag, values[r][send[q]])
    for r, recv in enumerate(recvs):
        for q in sorted(recv):
            buf = box.recv(q, r, tag)
            slots = recv[q]
            if len(buf) != len(slots):
                raise HaloError(
                    f"halo buffer from rank {q} to rank {r} has {len(buf)} entries, schedule expects {len(slots)}"
                )
            values[r][slots] = buf
    if not box.empty():
        raise HaloError("unmatched halo messages left in the mailbox")
    return values


def halo_exchange(values: list, subs: list, kind: str = "tet", box: Mailbox | None = None) -> list:
    """Refresh ghost entries of per-rank local arrays from their owners.

    ``values[r]`` is rank r's local array (owned entries, then ghosts) for the
    given entity ``kind`` ('tet' or 'face').  Arrays are updated in place and
    returned.  A receive buffer whose length disagrees with the schedule is a
    hard error.
    """
    if kind == "tet":
        return exchange(values, [s.tet_send for s in subs], [s.tet_recv for s in subs], kind, box)
    if kind == "face":
        return exchange(values, [s.face_send for s in subs], [s.face_recv for s in subs], kind, box)
    raise ValueError("kind must be 'tet' or 'face'")


def unknown_schedules(sub: LocalSubcomplex):
    """Face and tet schedules re-expressed as positions in the local unknown vector.

    Local unknown order: owned faces, owned tets, ghost faces, ghost tets.
    """
    nof, not_ = sub.n_owned_faces, sub.n_owned_tets
    ngf = len(sub.faces) - nof

    def fpos(p):
        p = np.asarray(p)
        return np.where(p < nof, p, nof + not_ + (p - nof))

    def tpos(p):
        p = np.asarray(p)
        return np.where(p < not_, nof + p, nof + not_ + ngf + (p - not_))

    face = ({q: fpos(v) for q, v in sub.face_send.items()}, {q: fpos(v) for q, v in sub.face_recv.items()})
    tet = ({q: tpos(v) for q, v in sub.tet_send.items()}, {q: tpos(v) for q, v in sub.tet_recv.items()})
    return face, tet
