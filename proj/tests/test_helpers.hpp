#pragma once

#include <functional>
#include <vector>

#include "structcbr/trees.hpp"
#include "structcbr/util.hpp"

namespace structcbr::testing {

// Random well-formed (not necessarily well-typed) tree over the full vocab.
inline TreePtr random_tree(Rng& rng, int max_depth) {
    auto leaf = [&]() -> TreePtr {
        switch (rng() % 4) {
            case 0: return make_col("t.c" + std::to_string(rng() % 4));
            case 1: return make_tab("t" + std::to_string(rng() % 3));
            case 2: return make_val(static_cast<int64_t>(rng() % 100));
            default: return make_val(std::string(1, static_cast<char>('a' + rng() % 5)));
        }
    };
    std::function<TreePtr(int)> gen = [&](int depth) -> TreePtr {
        if (depth <= 0 || rng() % 4 == 0) return leaf();
        if (rng() % 2 == 0) {
            Op op = static_cast<Op>(3 + rng() % 10);
            return make_unary(op, gen(depth - 1));
        }
        Op op = static_cast<Op>(13 + rng() % 13);
        return make_binary(op, gen(depth - 1), gen(depth - 1));
    };
    return gen(max_depth);
}

inline TreePtr random_keep_free_tree(Rng& rng, int max_depth) {
    TreePtr t = random_tree(rng, max_depth);
    return collapse_keep(t);
}

// Exhaustive edit-script oracle for ordered tree edit distance. Enumerates
// every ancestor- and order-preserving node mapping between the two trees and
// takes the cheapest; independent of the Zhang-Shasha implementation.
namespace ted_oracle_detail {

struct FlatTree {
    std::vector<Op> label;                 // preorder
    std::vector<std::vector<bool>> anc;    // anc[i][j]: i is ancestor of j
    size_t size() const { return label.size(); }
};

inline void flatten(const TreePtr& t, FlatTree& f, std::vector<int>& path) {
    int idx = static_cast<int>(f.label.size());
    f.label.push_back(t->op);
    f.anc.emplace_back();
    for (auto& row : f.anc) row.resize(f.label.size(), false);
    for (int a : path) f.anc[a][idx] = true;
    path.push_back(idx);
    if (t->left) flatten(t->left, f, path);
    if (t->right) flatten(t->right, f, path);
    path.pop_back();
}

inline FlatTree flatten(const TreePtr& t) {
    FlatTree f;
    std::vector<int> path;
    flatten(t, f, path);
    for (auto& row : f.anc) row.resize(f.label.size(), false);
    return f;
}

inline void search(const FlatTree& a, const FlatTree& b, size_t i, int last_j,
                   std::vector<std::pair<int, int>>& mapped, int cost, int& best) {
    if (cost >= best) return;
    if (i == a.size()) {
        int remaining_b = static_cast<int>(b.size()) - last_j - 1;
        // unmapped b nodes after last_j are insertions; earlier unmapped b
        // nodes were already charged when skipped below
        best = std::min(best, cost + remaining_b);
        return;
    }
    // delete a[i]
    search(a, b, i + 1, last_j, mapped, cost + 1, best);
    // or map a[i] to some b[j], j > last_j (preorder preserved); charge the
    // skipped-over b nodes as insertions
    for (int j = last_j + 1; j < static_cast<int>(b.size()); ++j) {
        bool ok = true;
        for (auto [pa, pb] : mapped) {
            if (a.anc[pa][i] != b.anc[pb][j]) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        int relabel = a.label[i] == b.label[j] ? 0 : 1;
        int skipped = j - last_j - 1;
        mapped.emplace_back(static_cast<int>(i), j);
        search(a, b, i + 1, j, mapped, cost + relabel + skipped, best);
        mapped.pop_back();
    }
}

}  // namespace ted_oracle_detail

inline int ted_oracle_raw(const TreePtr& ta, const TreePtr& tb) {
    auto a = ted_oracle_detail::flatten(ta);
    auto b = ted_oracle_detail::flatten(tb);
    int best = static_cast<int>(a.size() + b.size());
    std::vector<std::pair<int, int>> mapped;
    ted_oracle_detail::search(a, b, 0, -1, mapped, 0, best);
    return best;
}

inline double ted_oracle(const TreePtr& a, const TreePtr& b) {
    return static_cast<double>(ted_oracle_raw(a, b)) /
           static_cast<double>(std::max(node_count(a), node_count(b)));
}

// All trees with at most max_nodes nodes over a reduced label set, for
// exhaustive TED cross-checks.
inline std::vector<TreePtr> enumerate_small_trees(int max_nodes) {
    std::vector<std::vector<TreePtr>> by_size(max_nodes + 1);
    by_size[1] = {make_col("t.a"), make_val(static_cast<int64_t>(1))};
    const Op unary[] = {Op::Count};
    const Op binary[] = {Op::Gt, Op::And};
    for (int n = 2; n <= max_nodes; ++n) {
        for (Op u : unary)
            for (const auto& c : by_size[n - 1]) by_size[n].push_back(make_unary(u, c));
        for (Op b : binary)
            for (int nl = 1; nl <= n - 2; ++nl)
                for (const auto& l : by_size[nl])
                    for (const auto& r : by_size[n - 1 - nl])
                        by_size[n].push_back(make_binary(b, l, r));
    }
    std::vector<TreePtr> all;
    for (auto& v : by_size) all.insert(all.end(), v.begin(), v.end());
    return all;
}

}  // namespace structcbr::testing
