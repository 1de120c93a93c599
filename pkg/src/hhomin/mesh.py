"""Conforming 2D triangulations with refinement.

Cells are stored counterclockwise with the bisection (refinement) edge
normalized to the edge between local vertices 0 and 1; local edge i is the
edge opposite vertex i.  Interior face normals point out of the adjacent
cell with the lower index (that cell is ``K_plus``); boundary normals point
out of the domain.  Meshes are immutable: refinement returns a new mesh.
"""

import numpy as np
from dataclasses import dataclass

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2
_LABEL_CHARS = {INTERIOR: "I", DIRICHLET: "D", NEUMANN: "N"}
_CHAR_LABELS = {v: k for k, v in _LABEL_CHARS.items()}

# local edge i is opposite local vertex i
_EDGE_VERTS = ((1, 2), (2, 0), (0, 1))


@dataclass(frozen=True)
class Face:
    """One mesh edge with orientation and boundary label."""
    vertices: tuple          # (a, b) vertex indices
    normal: np.ndarray       # unit normal, outward for K_plus
    K_plus: int
    K_minus: int             # -1 on boundary faces
    label: int               # INTERIOR, DIRICHLET or NEUMANN

    @property
    def is_boundary(self):
        return self.K_minus < 0


class Mesh:
    def __init__(self, vertices, cells, refinement_edge=None,
                 boundary_labels=None):
        """Build a conforming triangulation.

        vertices: (NV, 2) coordinates.  cells: (NC, 3) vertex triples,
        counterclockwise.  refinement_edge: per-cell local edge index of
        the bisection edge (default: longest edge).  boundary_labels:
        dict mapping sorted vertex pairs of boundary edges to DIRICHLET
        or NEUMANN (default: all DIRICHLET).
        """
        vertices = np.asarray(vertices, dtype=float)
        cells = np.asarray(cells, dtype=np.int64)
        if refinement_edge is None:
            refinement_edge = self._longest_edges(vertices, cells)
        cells = self._normalize(cells, np.asarray(refinement_edge))

        self.vertices = vertices
        self.cells = cells
        # after normalization the bisection edge is local edge 2
        self.refinement_edge = np.full(len(cells), 2, dtype=np.int64)

        e1 = vertices[cells[:, 1]] - vertices[cells[:, 0]]
        e2 = vertices[cells[:, 2]] - vertices[cells[:, 0]]
        self.areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        if np.any(self.areas <= 0):
            raise ValueError("cells must be counterclockwise with positive area")

        self._build_faces(boundary_labels or {})
        self._check_conformity()
        for arr in (self.vertices, self.cells, self.refinement_edge,
                    self.areas, self.cell_faces, self.cell_face_signs,
                    self.face_vertices, self.face_cells, self.face_normals,
                    self.face_labels, self.h_S, self.h_K):
            arr.setflags(write=False)

    # -- construction helpers -------------------------------------------

    @staticmethod
    def _longest_edges(vertices, cells):
        lengths = np.stack([
            np.linalg.norm(vertices[cells[:, b]] - vertices[cells[:, a]],
                           axis=1)
            for a, b in _EDGE_VERTS], axis=1)
        return np.argmax(lengths, axis=1)

    @staticmethod
    def _normalize(cells, refinement_edge):
        """Cyclically rotate triples so the bisection edge is edge 2."""
        out = np.empty_like(cells)
        for e, perm in ((0, (1, 2, 0)), (1, (2, 0, 1)), (2, (0, 1, 2))):
            mask = refinement_edge == e
            out[mask] = cells[np.ix_(mask.nonzero()[0], perm)]
        return out

    def _build_faces(self, boundary_labels):
        NC = len(self.cells)
        edge_map = {}
        for c in range(NC):
            for le, (a, b) in enumerate(_EDGE_VERTS):
                key = tuple(sorted((self.cells[c, a], self.cells[c, b])))
                edge_map.setdefault(key, []).append((c, le))

        NF = len(edge_map)
        self.face_vertices = np.empty((NF, 2), dtype=np.int64)
        self.face_cells = np.full((NF, 2), -1, dtype=np.int64)
        self.face_labels = np.empty(NF, dtype=np.int64)
        self.cell_faces = np.empty((NC, 3), dtype=np.int64)
        self.cell_face_signs = np.empty((NC, 3), dtype=np.int64)

        for f, (key, adj) in enumerate(sorted(edge_map.items())):
            if len(adj) > 2:
                raise ValueError(f"edge {key} shared by {len(adj)} cells")
            adj.sort()          # K_plus = lower cell index
            kp = adj[0][0]
            self.face_vertices[f] = key
            self.face_cells[f, 0] = kp
            if len(adj) == 2:
                self.face_cells[f, 1] = adj[1][0]
                self.face_labels[f] = INTERIOR
            else:
                self.face_labels[f] = boundary_labels.get(key, DIRICHLET)
            for c, le in adj:
                self.cell_faces[c, le] = f
                self.cell_face_signs[c, le] = 1 if c == kp else -1

        # normal: rotate the K_plus-outward tangent; for the edge (a, b)
        # traversed so K_plus lies on the left, the outward normal is the
        # clockwise rotation of b - a
        a = self.vertices[self.face_vertices[:, 0]]
        b = self.vertices[self.face_vertices[:, 1]]
        tang = b - a
        self.h_S = np.linalg.norm(tang, axis=1)
        normal = np.column_stack([tang[:, 1], -tang[:, 0]]) / self.h_S[:, None]
        # fix sign so the normal points out of K_plus: compare against the
        # vector from the K_plus centroid to the face midpoint
        centroid = self.vertices[self.cells].mean(axis=1)
        mid = 0.5 * (a + b)
        outward = mid - centroid[self.face_cells[:, 0]]
        flip = np.sum(normal * outward, axis=1) < 0
        normal[flip] *= -1
        self.face_normals = normal

        lengths = np.stack([self.h_S[self.cell_faces[:, i]]
                            for i in range(3)], axis=1)
        self.h_K = lengths.max(axis=1)

    def _check_conformity(self):
        interior = self.face_labels == INTERIOR
        if np.any(self.face_cells[interior, 1] < 0):
            raise ValueError("interior face with one adjacent cell")
        if np.any(self.face_cells[~interior, 1] >= 0):
            raise ValueError("boundary face with two adjacent cells")
        nrm = np.linalg.norm(self.face_normals, axis=1)
        if not np.allclose(nrm, 1.0, atol=1e-12):
            raise ValueError("face normals must be unit length")

    # -- queries ---------------------------------------------------------

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_faces(self):
        return len(self.face_vertices)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def h_max(self):
        return self.h_K.max()

    @property
    def faces(self):
        return [Face(tuple(self.face_vertices[f]), self.face_normals[f],
                     int(self.face_cells[f, 0]), int(self.face_cells[f, 1]),
                     int(self.face_labels[f]))
                for f in range(self.num_faces)]

    def boundary_label_map(self):
        out = {}
        for f in range(self.num_faces):
            if self.face_labels[f] != INTERIOR:
                out[tuple(sorted(self.face_vertices[f]))] = \
                    int(self.face_labels[f])
        return out

    def min_angle(self):
        angles = []
        for i in range(3):
            p = self.vertices[self.cells[:, i]]
            q = self.vertices[self.cells[:, (i + 1) % 3]] - p
            r = self.vertices[self.cells[:, (i + 2) % 3]] - p
            cosang = np.sum(q * r, axis=1) / (
                np.linalg.norm(q, axis=1) * np.linalg.norm(r, axis=1))
            angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return np.min(angles)

    def cell_diameters(self):
        return self.h_K


def lshape_initial():
    """L-shaped domain (-1,1)^2 minus [0,1)x(-1,0], 6 triangles.

    Each of the three unit squares is split along its diagonal through the
    origin; all boundary faces are Dirichlet and every bisection edge is
    the diagonal (the longest edge).
    """
    vertices = np.array([
        [0.0, 0.0],    # 0 origin (reentrant corner)
        [1.0, 0.0],    # 1
        [1.0, 1.0],    # 2
        [0.0, 1.0],    # 3
        [-1.0, 1.0],   # 4
        [-1.0, 0.0],   # 5
        [-1.0, -1.0],  # 6
        [0.0, -1.0],   # 7
    ])
    cells = np.array([
        [0, 1, 2],
        [0, 2, 3],
        [0, 3, 4],
        [0, 4, 5],
        [0, 5, 6],
        [0, 6, 7],
    ])
    return Mesh(vertices, cells)


def _bisect_cells(mesh, marked_edges):
    """Bisect every cell whose edges intersect `marked_edges` (closed set).

    marked_edges must already satisfy the closure property: whenever any
    edge of a cell is marked, the cell's bisection edge is marked too.
    """
    verts = [tuple(v) for v in mesh.vertices]
    midpoint = {}

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in midpoint:
            verts.append(tuple(0.5 * (mesh.vertices[a] + mesh.vertices[b])))
            midpoint[key] = len(verts) - 1
        return midpoint[key]

    bnd = mesh.boundary_label_map()

    def split_bnd(a, b, m):
        key = (min(a, b), max(a, b))
        if key in bnd:
            lab = bnd.pop(key)
            bnd[(min(a, m), max(a, m))] = lab
            bnd[(min(b, m), max(b, m))] = lab

    new_cells = []
    parents = []
    for c in range(mesh.num_cells):
        v0, v1, v2 = (int(v) for v in mesh.cells[c])
        edges = [tuple(sorted(e)) for e in
                 ((v1, v2), (v2, v0), (v0, v1))]
        if edges[2] not in marked_edges:
            new_cells.append((v0, v1, v2))
            parents.append(c)
            continue
        m2 = mid(v0, v1)
        split_bnd(v0, v1, m2)
        # children of the first bisection, newest vertex last
        for (c0, c1, c2), parent_edge in (((v2, v0, m2), edges[1]),
                                          ((v1, v2, m2), edges[0])):
            if parent_edge in marked_edges:
                m = mid(c0, c1)
                split_bnd(c0, c1, m)
                new_cells.append((c2, c0, m))
                new_cells.append((c1, c2, m))
                parents.extend((c, c))
            else:
                new_cells.append((c0, c1, c2))
                parents.append(c)

    cells = np.array(new_cells, dtype=np.int64)
    # bisection edge of every (old and new) cell is stored first two
    out = Mesh(np.array(verts), cells,
               refinement_edge=np.full(len(cells), 2),
               boundary_labels=bnd)
    out.parent_cells = np.array(parents, dtype=np.int64)
    return out


def refine_bisect(mesh, marked):
    """Newest-vertex bisection of the marked cells, with closure."""
    marked = [int(m) for m in marked]
    if not marked:
        return mesh
    if min(marked) < 0 or max(marked) >= mesh.num_cells:
        raise ValueError("marked cell index out of range")

    cell_edges = [[tuple(sorted((int(mesh.cells[c, a]), int(mesh.cells[c, b]))))
                   for a, b in _EDGE_VERTS] for c in range(mesh.num_cells)]
    marked_edges = {cell_edges[c][2] for c in marked}
    # closure: a cell with any marked edge must bisect its own edge first
    changed = True
    while changed:
        changed = False
        for c in range(mesh.num_cells):
            e = cell_edges[c]
            if e[2] not in marked_edges and (e[0] in marked_edges
                                             or e[1] in marked_edges):
                marked_edges.add(e[2])
                changed = True
    return _bisect_cells(mesh, marked_edges)


def refine_uniform(mesh):
    """Bisect every edge: each cell splits into four children."""
    all_edges = set()
    for c in range(mesh.num_cells):
        for a, b in _EDGE_VERTS:
            all_edges.add(tuple(sorted((int(mesh.cells[c, a]),
                                        int(mesh.cells[c, b])))))
    return _bisect_cells(mesh, all_edges)


def write_mesh(mesh, path):
    """Plain-text mesh: 'NV NC', vertex lines, cell lines with edge labels."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.num_vertices} {mesh.num_cells}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for c in range(mesh.num_cells):
            labs = " ".join(_LABEL_CHARS[int(mesh.face_labels[
                mesh.cell_faces[c, i]])] for i in range(3))
            i, j, k = mesh.cells[c]
            fh.write(f"{i} {j} {k} {labs}\n")


def read_mesh(path):
    """Read the plain-text format written by `write_mesh`.

    Edge labels are optional; unlabeled boundary edges become Dirichlet.
    """
    with open(path) as fh:
        tokens = fh.read().split("\n")
    lines = [ln.split() for ln in tokens if ln.strip()]
    nv, nc = int(lines[0][0]), int(lines[0][1])
    if len(lines) != 1 + nv + nc:
        raise ValueError(f"expected {1 + nv + nc} lines, got {len(lines)}")
    vertices = np.array([[float(t) for t in ln[:2]]
                         for ln in lines[1:1 + nv]])
    cells = np.array([[int(t) for t in ln[:3]]
                      for ln in lines[1 + nv:]])
    labels = {}
    for c, ln in enumerate(lines[1 + nv:]):
        if len(ln) >= 6:
            for le, tok in enumerate(ln[3:6]):
                lab = _CHAR_LABELS.get(tok.upper())
                if lab is None:
                    raise ValueError(
                        f"bad edge label {tok!r} on line {2 + nv + c}")
                if lab != INTERIOR:
                    a, b = _EDGE_VERTS[le]
                    labels[tuple(sorted((cells[c, a], cells[c, b])))] = lab
    return Mesh(vertices, cells, boundary_labels=labels)
