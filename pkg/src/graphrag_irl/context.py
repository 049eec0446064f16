"""Precomputed per-state tables and batched feature assembly.

States are indexed 0..S-1. Every split user contributes one state per
positive in their trajectory: the training transitions, then the
validation state, then the test state. A state at time t sees the user's
positives and interactions with timestamp strictly below t.

Community tables, popularity counts and the global feedback mean come from
the training period only: for each user, the interactions ordered before
their validation item by (timestamp, item id).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
import scipy.sparse as sp

from .data import FilteredDataset, ItemId, NegativeSampler, Split, UserId
from .features import FeatureLayout
from .graph import HeteroGraph, TextIndex, weight_rows
from .retrieval import CommunityIndex

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0


@dataclass
class RetrievalSettings:
    k_recent: int = 10
    m: int = 50


class ExperimentContext:
    def __init__(self, dataset: FilteredDataset, split: Split, graph: HeteroGraph,
                 text_index: TextIndex, settings: RetrievalSettings | None = None):
        self.dataset = dataset
        self.split = split
        self.graph = graph
        self.text_index = text_index
        self.settings = settings or RetrievalSettings()
        self.user_ids: list[UserId] = sorted(split.users)
        self.uindex = {u: k for k, u in enumerate(self.user_ids)}
        self.item_ids: list[ItemId] = dataset.item_ids
        self.iindex = {i: k for k, i in enumerate(self.item_ids)}
        self.categories: tuple[str, ...] = tuple(sorted({c for m in dataset.items.values() for c in m.categories}))
        self.sampler = NegativeSampler(dataset)
        self._build_items()
        self._build_training_tables()
        self._build_states()
        log.info("context: %d users, %d items, %d states (%d train transitions)",
                 len(self.user_ids), len(self.item_ids), self.n_states, len(self.train_states))

    # -- items ---------------------------------------------------------------
    def _build_items(self) -> None:
        g, n = len(self.categories), len(self.item_ids)
        cidx = {c: j for j, c in enumerate(self.categories)}
        self.item_cat = np.zeros((n, g))
        for i, item in enumerate(self.item_ids):
            for c in self.dataset.items[item].categories:
                self.item_cat[i, cidx[c]] = 1.0
        ncat = self.item_cat.sum(axis=1)
        self.item_cat_frac = self.item_cat / np.where(ncat > 0, ncat, 1.0)[:, None]
        self.item_cat_norm = np.sqrt(ncat)
        concepts = sorted(self.graph.concept_nodes)
        kidx = {c: j for j, c in enumerate(concepts)}
        rows, cols = [], []
        for item, c in self.graph.edges_item_concept:
            if item in self.iindex:
                rows.append(self.iindex[item])
                cols.append(kidx[c])
        self.item_concepts = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, len(concepts)))
        # text rows aligned with item index
        trow = [self.text_index.row[i] for i in self.item_ids]
        self.text_vectors = sp.csr_matrix(self.text_index.doc_vectors[trow])
        self.text_counts = sp.csr_matrix(self.text_index.counts[trow])

    # -- training-period aggregates -------------------------------------------
    def _build_training_tables(self) -> None:
        by_user = self.dataset.by_user()
        u_n, i_n = len(self.user_ids), len(self.item_ids)
        feedback = np.zeros((u_n, i_n))
        interacted = np.zeros((u_n, i_n))
        popularity = np.zeros(i_n)
        fb_sum, fb_n = 0.0, 0
        self.user_times: list[np.ndarray] = []
        positive = self.dataset.positive
        profiles = np.zeros((u_n, len(self.categories)))
        for u, user in enumerate(self.user_ids):
            rows = sorted(by_user[user], key=lambda x: (x.timestamp, x.item_id))
            self.user_times.append(np.array([x.timestamp for x in rows], dtype=np.float64))
            val = self.split.users[user].val
            cut = (val.timestamp, val.item_id)
            for x in rows:
                if (x.timestamp, x.item_id) >= cut:
                    break
                i = self.iindex[x.item_id]
                feedback[u, i] = x.feedback
                interacted[u, i] = 1.0
                popularity[i] += 1
                fb_sum += x.feedback
                fb_n += 1
            for x in self.split.users[user].train:
                profiles[u] += self.item_cat_frac[self.iindex[x.item_id]]
        tot = profiles.sum(axis=1, keepdims=True)
        self.final_profiles = profiles / np.where(tot > 0, tot, 1.0)
        self.popularity = popularity
        self.global_mean = fb_sum / fb_n if fb_n else 0.0
        self.train_feedback = {
            user: {self.item_ids[i]: feedback[u, i] for i in np.flatnonzero(interacted[u])}
            for u, user in enumerate(self.user_ids)
        }
        self.community = CommunityIndex(self.user_ids, self.final_profiles, feedback, interacted,
                                        positive, self.global_mean, self.settings.m)

    # -- states -----------------------------------------------------------------
    def _build_states(self) -> None:
        k = self.settings.k_recent
        s_user, s_time, s_item, s_hist = [], [], [], []
        train_states, val_states, test_states = [], [], []
        pos_rows: list[int] = []  # item index per trajectory position, stacked over users
        win_r, win_c = [], []  # state -> stacked positions of its K most recent positives
        cum_rows: list[np.ndarray] = []
        cum_concepts: list[sp.csr_matrix] = []
        s = 0
        for u, user in enumerate(self.user_ids):
            us = self.split.users[user]
            traj = list(us.train) + [us.val, us.test]
            base = len(pos_rows)
            items = [self.iindex[x.item_id] for x in traj]
            pos_rows.extend(items)
            ts = np.array([x.timestamp for x in traj])
            hist_len = np.searchsorted(ts, ts, side="left")
            cum = np.vstack([np.zeros(len(self.categories)), np.cumsum(self.item_cat_frac[items], axis=0)])
            cum_rows.append(cum[hist_len])
            ic = self.item_concepts[items]
            conc = sp.csr_matrix(np.cumsum(ic.toarray(), axis=0) if ic.shape[1] else np.zeros((len(items), 0)))
            conc = sp.vstack([sp.csr_matrix((1, ic.shape[1])), conc]).tocsr()
            cum_concepts.append(conc[hist_len])
            for j, x in enumerate(traj):
                h = int(hist_len[j])
                for p in range(max(0, h - k), h):
                    win_r.append(s)
                    win_c.append(base + p)
                s_user.append(u)
                s_time.append(x.timestamp)
                s_item.append(items[j])
                s_hist.append(h)
                if j < len(us.train):
                    train_states.append(s)
                elif j == len(us.train):
                    val_states.append(s)
                else:
                    test_states.append(s)
                s += 1
        self.n_states = s
        self.state_user = np.array(s_user)
        self.state_time = np.array(s_time, dtype=np.float64)
        self.state_item = np.array(s_item)
        self.state_hist = np.array(s_hist)
        self.train_states = np.array(train_states)
        self.val_states = np.array(val_states)
        self.test_states = np.array(test_states)
        cum = np.vstack(cum_rows)
        tot = cum.sum(axis=1, keepdims=True)
        self.state_dist = cum / np.where(tot > 0, tot, 1.0)
        self.state_dist_norm = np.linalg.norm(self.state_dist, axis=1)
        self.state_concepts = (sp.vstack(cum_concepts).tocsr() > 0).astype(np.float64)
        # activity and recency from all of the user's interactions before t
        n_prior = np.zeros(s)
        delta = np.zeros(s)
        for st in range(s):
            times = self.user_times[self.state_user[st]]
            n = int(np.searchsorted(times, self.state_time[st], side="left"))
            n_prior[st] = n
            delta[st] = (self.state_time[st] - times[n - 1]) / SECONDS_PER_DAY if n else 365.0
        self.state_n_prior = n_prior
        self.state_delta_days = delta
        self.state_activity = np.log1p(n_prior)
        self.state_recency = np.minimum(delta / 365.0, 1.0)
        window = sp.csr_matrix((np.ones(len(win_r)), (win_r, win_c)), shape=(s, len(pos_rows)))
        query_counts = window @ self.text_counts[pos_rows]
        self.state_query = weight_rows(sp.csr_matrix(query_counts), self.text_index.idf)

    # -- features -------------------------------------------------------------
    def layout(self, graph_features: bool = True) -> FeatureLayout:
        return FeatureLayout(self.categories, graph_features)

    def features(self, states: np.ndarray, cands: np.ndarray, graph_features: bool = True) -> np.ndarray:
        """Raw feature tensor (B, C, d) for state indices (B,) and item indices (B, C)."""
        states = np.asarray(states)
        cands = np.asarray(cands)
        b, c = cands.shape
        g = len(self.categories)
        d = 2 * g + 4 + (4 if graph_features else 0)
        out = np.empty((b, c, d))
        dist = self.state_dist[states]
        out[:, :, :g] = dist[:, None, :]
        out[:, :, g] = self.state_activity[states][:, None]
        out[:, :, g + 1] = self.state_recency[states][:, None]
        icat = self.item_cat[cands]
        out[:, :, g + 2:2 * g + 2] = icat
        out[:, :, 2 * g + 2] = np.log1p(self.popularity[cands])
        dot = np.einsum("bg,bcg->bc", dist, icat)
        denom = self.state_dist_norm[states][:, None] * self.item_cat_norm[cands]
        out[:, :, 2 * g + 3] = np.where(denom > 0, dot / np.where(denom > 0, denom, 1.0), 0.0)
        if graph_features:
            users = self.state_user[states]
            text = (self.state_query[states] @ self.text_vectors.T).toarray()
            out[:, :, 2 * g + 4] = np.take_along_axis(text, cands, axis=1)
            out[:, :, 2 * g + 5] = self.community.support[users[:, None], cands]
            if self.item_concepts.shape[1]:
                shared = (self.state_concepts[states] @ self.item_concepts.T).toarray()
                out[:, :, 2 * g + 6] = np.take_along_axis(shared, cands, axis=1)
            else:
                out[:, :, 2 * g + 6] = 0.0
            out[:, :, 2 * g + 7] = self.community.avg_feedback[users[:, None], cands]
        return out

    def eval_candidates(self, candidate_sets: Mapping[UserId, Any]) -> np.ndarray:
        """(U, C) item-index matrix in ``user_ids`` order, positive first."""
        return np.array([[self.iindex[i] for i in candidate_sets[u].items] for u in self.user_ids])

    def history_items(self, state: int) -> list[ItemId]:
        u = self.state_user[state]
        us = self.split.users[self.user_ids[u]]
        traj = list(us.train) + [us.val, us.test]
        return [x.item_id for x in traj[: self.state_hist[state]]]

