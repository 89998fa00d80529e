#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "structcbr/util.hpp"

namespace structcbr {

// Relational-algebra operator vocabulary. Ids are stable small integers;
// leaf markers come first, then unary, then binary.
enum class Op : int {
    // leaf markers
    ColConst = 0,
    TabConst = 1,
    Value = 2,
    // unary
    Count = 3,
    Sum = 4,
    Min = 5,
    Max = 6,
    Avg = 7,
    Keep = 8,
    Distinct = 9,
    OrderAsc = 10,
    OrderDesc = 11,
    Limit1 = 12,
    // binary
    Gt = 13,
    Ge = 14,
    Lt = 15,
    Le = 16,
    Eq = 17,
    Ne = 18,
    And = 19,
    Join = 20,
    Project = 21,
    GroupBy = 22,
    Union = 23,
    Intersect = 24,
    Except = 25,
};

constexpr int kNumOps = 26;

inline bool is_leaf_op(Op op) { return static_cast<int>(op) <= 2; }
inline bool is_unary_op(Op op) { return static_cast<int>(op) >= 3 && static_cast<int>(op) <= 12; }
inline bool is_binary_op(Op op) { return static_cast<int>(op) >= 13; }
inline bool is_aggregate_op(Op op) {
    return op == Op::Count || op == Op::Sum || op == Op::Min || op == Op::Max || op == Op::Avg;
}
inline bool is_comparator_op(Op op) {
    return op == Op::Gt || op == Op::Ge || op == Op::Lt || op == Op::Le || op == Op::Eq ||
           op == Op::Ne;
}
inline bool is_commutative_op(Op op) {
    return op == Op::And || op == Op::Union || op == Op::Intersect || op == Op::Join;
}

inline const char* op_token(Op op) {
    switch (op) {
        case Op::ColConst: return "col";
        case Op::TabConst: return "tab";
        case Op::Value: return "val";
        case Op::Count: return "count";
        case Op::Sum: return "sum";
        case Op::Min: return "min";
        case Op::Max: return "max";
        case Op::Avg: return "avg";
        case Op::Keep: return "keep";
        case Op::Distinct: return "distinct";
        case Op::OrderAsc: return "order_asc";
        case Op::OrderDesc: return "order_desc";
        case Op::Limit1: return "limit1";
        case Op::Gt: return ">";
        case Op::Ge: return ">=";
        case Op::Lt: return "<";
        case Op::Le: return "<=";
        case Op::Eq: return "=";
        case Op::Ne: return "!=";
        case Op::And: return "and";
        case Op::Join: return "join";
        case Op::Project: return "project";
        case Op::GroupBy: return "groupby";
        case Op::Union: return "union";
        case Op::Intersect: return "intersect";
        case Op::Except: return "except";
    }
    return "?";
}

inline std::optional<Op> op_from_token(const std::string& tok) {
    for (int i = 0; i < kNumOps; ++i) {
        Op op = static_cast<Op>(i);
        if (tok == op_token(op)) return op;
    }
    return std::nullopt;
}

enum class LeafKind { SchemaConstant, DBValue };

struct OperatorVocab {
    std::vector<Op> unary_ops;
    std::vector<Op> binary_ops;
    std::vector<LeafKind> leaf_kinds{LeafKind::SchemaConstant, LeafKind::DBValue};

    size_t unary_count() const { return unary_ops.size(); }
    size_t binary_count() const { return binary_ops.size(); }
    // |F| = K^2 |B| + K |U|
    size_t frontier_size(size_t beam) const {
        return beam * beam * binary_ops.size() + beam * unary_ops.size();
    }
};

inline OperatorVocab default_vocab() {
    OperatorVocab v;
    for (int i = 3; i <= 12; ++i) v.unary_ops.push_back(static_cast<Op>(i));
    for (int i = 13; i < kNumOps; ++i) v.binary_ops.push_back(static_cast<Op>(i));
    return v;
}

// Leaf payloads. Schema constants carry the element's canonical name
// ("person" or "person.age"); DB values carry a literal or the wildcard
// that canonicalization substitutes for them.
struct Wildcard {
    bool operator==(const Wildcard&) const = default;
};
using LeafValue = std::variant<std::monostate, std::string, int64_t, Wildcard>;

struct Tree;
using TreePtr = std::shared_ptr<const Tree>;

struct Tree {
    Op op = Op::Keep;
    TreePtr left;
    TreePtr right;
    std::string schema_name;  // ColConst / TabConst payload
    LeafValue value;          // Value payload
    int height = 0;

    bool is_leaf() const { return is_leaf_op(op); }
};

inline TreePtr make_col(std::string name) {
    auto t = std::make_shared<Tree>();
    t->op = Op::ColConst;
    t->schema_name = std::move(name);
    return t;
}

inline TreePtr make_tab(std::string name) {
    auto t = std::make_shared<Tree>();
    t->op = Op::TabConst;
    t->schema_name = std::move(name);
    return t;
}

inline TreePtr make_val(LeafValue v) {
    auto t = std::make_shared<Tree>();
    t->op = Op::Value;
    t->value = std::move(v);
    return t;
}

inline TreePtr make_unary(Op op, TreePtr child) {
    assert(is_unary_op(op));
    auto t = std::make_shared<Tree>();
    t->op = op;
    t->left = std::move(child);
    t->height = t->left->height + 1;
    return t;
}

inline TreePtr make_binary(Op op, TreePtr left, TreePtr right) {
    assert(is_binary_op(op));
    auto t = std::make_shared<Tree>();
    t->op = op;
    t->left = std::move(left);
    t->right = std::move(right);
    t->height = std::max(t->left->height, t->right->height) + 1;
    return t;
}

inline size_t node_count(const TreePtr& t) {
    if (!t) return 0;
    return 1 + node_count(t->left) + node_count(t->right);
}

inline bool tree_equal(const TreePtr& a, const TreePtr& b) {
    if (a == b) return true;
    if (!a || !b) return false;
    if (a->op != b->op) return false;
    if (a->is_leaf()) return a->schema_name == b->schema_name && a->value == b->value;
    return tree_equal(a->left, b->left) && tree_equal(a->right, b->right);
}

// ---------------------------------------------------------------------------
// Serialization: s-expressions like (> (col person.age) (val 60)).
// Round-trips bit-exactly; text values are double-quoted with \-escapes.

inline void format_tree_rec(const TreePtr& t, std::string& out) {
    out.push_back('(');
    out += op_token(t->op);
    if (t->is_leaf()) {
        out.push_back(' ');
        if (t->op == Op::Value) {
            if (std::holds_alternative<int64_t>(t->value)) {
                out += std::to_string(std::get<int64_t>(t->value));
            } else if (std::holds_alternative<std::string>(t->value)) {
                out.push_back('"');
                for (char c : std::get<std::string>(t->value)) {
                    if (c == '"' || c == '\\') out.push_back('\\');
                    out.push_back(c);
                }
                out.push_back('"');
            } else {
                out.push_back('*');
            }
        } else {
            out += t->schema_name;
        }
    } else {
        out.push_back(' ');
        format_tree_rec(t->left, out);
        if (t->right) {
            out.push_back(' ');
            format_tree_rec(t->right, out);
        }
    }
    out.push_back(')');
}

inline std::string format_tree(const TreePtr& t) {
    std::string out;
    format_tree_rec(t, out);
    return out;
}

namespace detail {

struct SexprParser {
    const std::string& s;
    size_t pos = 0;

    explicit SexprParser(const std::string& text) : s(text) {}

    [[noreturn]] void fail(const std::string& msg) const {
        throw std::runtime_error("tree parse error at offset " + std::to_string(pos) + ": " + msg);
    }
    void skip_ws() {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    void expect(char c) {
        skip_ws();
        if (pos >= s.size() || s[pos] != c) fail(std::string("expected '") + c + "'");
        ++pos;
    }
    std::string atom() {
        skip_ws();
        size_t start = pos;
        while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos])) &&
               s[pos] != '(' && s[pos] != ')') {
            ++pos;
        }
        if (pos == start) fail("expected atom");
        return s.substr(start, pos - start);
    }
    std::string quoted() {
        ++pos;  // opening quote
        std::string out;
        while (pos < s.size() && s[pos] != '"') {
            if (s[pos] == '\\' && pos + 1 < s.size()) ++pos;
            out.push_back(s[pos++]);
        }
        if (pos >= s.size()) fail("unterminated string");
        ++pos;
        return out;
    }

    TreePtr parse() {
        expect('(');
        std::string tok = atom();
        auto op = op_from_token(tok);
        if (!op) fail("unknown operator '" + tok + "'");
        TreePtr result;
        if (is_leaf_op(*op)) {
            skip_ws();
            if (*op == Op::Value) {
                if (pos < s.size() && s[pos] == '"') {
                    result = make_val(quoted());
                } else {
                    std::string a = atom();
                    if (a == "*") {
                        result = make_val(Wildcard{});
                    } else {
                        try {
                            size_t used = 0;
                            int64_t v = std::stoll(a, &used);
                            if (used != a.size()) fail("bad integer literal '" + a + "'");
                            result = make_val(v);
                        } catch (const std::invalid_argument&) {
                            fail("bad value literal '" + a + "'");
                        }
                    }
                }
            } else {
                std::string name = atom();
                result = (*op == Op::ColConst) ? make_col(name) : make_tab(name);
            }
        } else if (is_unary_op(*op)) {
            result = make_unary(*op, parse());
        } else {
            TreePtr l = parse();
            TreePtr r = parse();
            result = make_binary(*op, std::move(l), std::move(r));
        }
        expect(')');
        return result;
    }
};

}  // namespace detail

inline TreePtr parse_tree(const std::string& text) {
    detail::SexprParser p(text);
    TreePtr t = p.parse();
    p.skip_ws();
    if (p.pos != text.size()) p.fail("trailing input");
    return t;
}

// ---------------------------------------------------------------------------
// Height balancing with the idempotent Keep operator.

inline TreePtr balance_tree(const TreePtr& tree, int target_height) {
    if (target_height < tree->height) {
        throw std::runtime_error("balance_tree: target height " + std::to_string(target_height) +
                                 " below tree height " + std::to_string(tree->height));
    }
    if (tree->is_leaf()) {
        TreePtr cur = tree;
        for (int i = 0; i < target_height; ++i) cur = make_unary(Op::Keep, cur);
        return cur;
    }
    if (is_unary_op(tree->op)) {
        return make_unary(tree->op, balance_tree(tree->left, target_height - 1));
    }
    return make_binary(tree->op, balance_tree(tree->left, target_height - 1),
                       balance_tree(tree->right, target_height - 1));
}

inline TreePtr collapse_keep(const TreePtr& tree) {
    if (tree->is_leaf()) return tree;
    if (tree->op == Op::Keep) return collapse_keep(tree->left);
    if (is_unary_op(tree->op)) {
        TreePtr c = collapse_keep(tree->left);
        if (c == tree->left) return tree;
        return make_unary(tree->op, std::move(c));
    }
    TreePtr l = collapse_keep(tree->left);
    TreePtr r = collapse_keep(tree->right);
    if (l == tree->left && r == tree->right) return tree;
    return make_binary(tree->op, std::move(l), std::move(r));
}

// One subtree per node, rooted at that node, in pre-order.
inline void enumerate_subtrees(const TreePtr& tree, std::vector<TreePtr>& out) {
    out.push_back(tree);
    if (tree->left) enumerate_subtrees(tree->left, out);
    if (tree->right) enumerate_subtrees(tree->right, out);
}

inline std::vector<TreePtr> enumerate_subtrees(const TreePtr& tree) {
    std::vector<TreePtr> out;
    enumerate_subtrees(tree, out);
    return out;
}

// ---------------------------------------------------------------------------
// Ordered tree edit distance (Zhang-Shasha), unit insert/delete cost,
// relabel cost 1 when operator labels differ. Leaf payloads never cost:
// (col age) and (col salary) relabel for free, so distance is structural.

namespace detail {

struct TedNodes {
    std::vector<Op> label;           // by post-order index
    std::vector<int> leftmost_leaf;  // l() in Zhang-Shasha
    std::vector<int> keyroots;
};

inline int ted_index(const TreePtr& t, TedNodes& n) {
    int lml;
    if (t->left) {
        lml = ted_index(t->left, n);
        if (t->right) ted_index(t->right, n);
    }
    int idx = static_cast<int>(n.label.size());
    n.label.push_back(t->op);
    if (!t->left) lml = idx;
    n.leftmost_leaf.push_back(lml);
    return lml;
}

inline TedNodes ted_prepare(const TreePtr& t) {
    TedNodes n;
    ted_index(t, n);
    int sz = static_cast<int>(n.label.size());
    std::vector<bool> seen(sz, false);
    for (int i = sz - 1; i >= 0; --i) {
        if (!seen[n.leftmost_leaf[i]]) {
            n.keyroots.push_back(i);
            seen[n.leftmost_leaf[i]] = true;
        }
    }
    std::sort(n.keyroots.begin(), n.keyroots.end());
    return n;
}

}  // namespace detail

inline int tree_edit_distance_raw(const TreePtr& a, const TreePtr& b) {
    detail::TedNodes ta = detail::ted_prepare(a);
    detail::TedNodes tb = detail::ted_prepare(b);
    int n = static_cast<int>(ta.label.size());
    int m = static_cast<int>(tb.label.size());
    std::vector<std::vector<int>> dist(n, std::vector<int>(m, 0));
    std::vector<std::vector<int>> fd(n + 1, std::vector<int>(m + 1, 0));

    for (int ki : ta.keyroots) {
        for (int kj : tb.keyroots) {
            int li = ta.leftmost_leaf[ki];
            int lj = tb.leftmost_leaf[kj];
            fd[li][lj] = 0;
            for (int i = li; i <= ki; ++i) fd[i + 1][lj] = fd[i][lj] + 1;
            for (int j = lj; j <= kj; ++j) fd[li][j + 1] = fd[li][j] + 1;
            for (int i = li; i <= ki; ++i) {
                for (int j = lj; j <= kj; ++j) {
                    if (ta.leftmost_leaf[i] == li && tb.leftmost_leaf[j] == lj) {
                        int relabel = ta.label[i] == tb.label[j] ? 0 : 1;
                        fd[i + 1][j + 1] = std::min({fd[i][j + 1] + 1, fd[i + 1][j] + 1,
                                                     fd[i][j] + relabel});
                        dist[i][j] = fd[i + 1][j + 1];
                    } else {
                        int pi = ta.leftmost_leaf[i];
                        int pj = tb.leftmost_leaf[j];
                        fd[i + 1][j + 1] = std::min({fd[i][j + 1] + 1, fd[i + 1][j] + 1,
                                                     fd[pi][pj] + dist[i][j]});
                    }
                }
            }
        }
    }
    return dist[n - 1][m - 1];
}

// Normalized by node count of the larger tree; in [0,1].
inline double tree_edit_distance(const TreePtr& a, const TreePtr& b) {
    size_t na = node_count(a);
    size_t nb = node_count(b);
    return static_cast<double>(tree_edit_distance_raw(a, b)) /
           static_cast<double>(std::max(na, nb));
}

// ---------------------------------------------------------------------------
// Canonical form backing the EM metric: Keep collapsed, commutative children
// sorted, DB values wildcarded.

inline TreePtr canonicalize(const TreePtr& tree) {
    TreePtr t = collapse_keep(tree);
    struct Rec {
        static TreePtr go(const TreePtr& t) {
            if (t->is_leaf()) {
                if (t->op == Op::Value && !std::holds_alternative<Wildcard>(t->value)) {
                    return make_val(Wildcard{});
                }
                return t;
            }
            if (is_unary_op(t->op)) return make_unary(t->op, go(t->left));
            TreePtr l = go(t->left);
            TreePtr r = go(t->right);
            if (is_commutative_op(t->op) && format_tree(r) < format_tree(l)) std::swap(l, r);
            return make_binary(t->op, std::move(l), std::move(r));
        }
    };
    return Rec::go(t);
}

inline bool exact_tree_match(const TreePtr& pred, const TreePtr& gold) {
    return tree_equal(canonicalize(pred), canonicalize(gold));
}

// ---------------------------------------------------------------------------
// Static typing of trees: which operator applications are grammatical. The
// decoder masks inadmissible frontier slots with -inf using this table.

enum class TreeType { Column, Value, Table, Rel, AggRel, Invalid };

inline TreeType leaf_type(Op op) {
    switch (op) {
        case Op::ColConst: return TreeType::Column;
        case Op::TabConst: return TreeType::Table;
        case Op::Value: return TreeType::Value;
        default: return TreeType::Invalid;
    }
}

inline TreeType apply_unary_type(Op op, TreeType child) {
    if (child == TreeType::Invalid) return TreeType::Invalid;
    if (op == Op::Keep) return child;
    if (is_aggregate_op(op)) {
        if (child == TreeType::Column || child == TreeType::Table || child == TreeType::Rel)
            return TreeType::AggRel;
        return TreeType::Invalid;
    }
    switch (op) {
        case Op::Distinct:
        case Op::OrderAsc:
        case Op::OrderDesc:
            return (child == TreeType::Column || child == TreeType::Rel) ? TreeType::Rel
                                                                         : TreeType::Invalid;
        case Op::Limit1:
            return child == TreeType::Rel ? TreeType::Rel : TreeType::Invalid;
        default:
            return TreeType::Invalid;
    }
}

inline TreeType apply_binary_type(Op op, TreeType l, TreeType r) {
    if (l == TreeType::Invalid || r == TreeType::Invalid) return TreeType::Invalid;
    auto scannable = [](TreeType t) { return t == TreeType::Table || t == TreeType::Rel; };
    auto settable = [](TreeType t) { return t == TreeType::Column || t == TreeType::Rel; };
    if (is_comparator_op(op)) {
        return (l == TreeType::Column && r == TreeType::Value) ? TreeType::Rel : TreeType::Invalid;
    }
    switch (op) {
        case Op::And:
            return (l == TreeType::Rel && r == TreeType::Rel) ? TreeType::Rel : TreeType::Invalid;
        case Op::Join:
            return (scannable(l) && scannable(r)) ? TreeType::Rel : TreeType::Invalid;
        case Op::Project:
            return (l == TreeType::Column && scannable(r)) ? TreeType::Rel : TreeType::Invalid;
        case Op::GroupBy:
            return (l == TreeType::Column && r == TreeType::AggRel) ? TreeType::Rel
                                                                    : TreeType::Invalid;
        case Op::Union:
        case Op::Intersect:
        case Op::Except:
            return (settable(l) && settable(r)) ? TreeType::Rel : TreeType::Invalid;
        default:
            return TreeType::Invalid;
    }
}

inline TreeType tree_type(const TreePtr& t) {
    if (t->is_leaf()) return leaf_type(t->op);
    if (is_unary_op(t->op)) return apply_unary_type(t->op, tree_type(t->left));
    return apply_binary_type(t->op, tree_type(t->left), tree_type(t->right));
}

}  // namespace structcbr
