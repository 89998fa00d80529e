#include <gtest/gtest.h>

#include "structcbr/trees.hpp"
#include "test_helpers.hpp"

using namespace structcbr;
using structcbr::testing::enumerate_small_trees;
using structcbr::testing::random_keep_free_tree;
using structcbr::testing::random_tree;
using structcbr::testing::ted_oracle;

TEST(Vocab, DefaultVocabShape) {
    OperatorVocab v = default_vocab();
    EXPECT_EQ(v.unary_count(), 10u);
    EXPECT_EQ(v.binary_count(), 13u);
    for (Op u : v.unary_ops)
        for (Op b : v.binary_ops) EXPECT_NE(u, b);
    EXPECT_NE(std::find(v.unary_ops.begin(), v.unary_ops.end(), Op::Keep), v.unary_ops.end());
}

TEST(Balance, LeafToKeepChain) {
    TreePtr c = make_col("t.age");
    TreePtr b = balance_tree(c, 2);
    EXPECT_EQ(b->op, Op::Keep);
    EXPECT_EQ(b->left->op, Op::Keep);
    EXPECT_EQ(b->left->left->op, Op::ColConst);
    EXPECT_EQ(b->height, 2);
}

TEST(Balance, AlreadyBalancedIsIdentical) {
    TreePtr t = parse_tree("(> (col t.age) (val 60))");
    TreePtr full = make_binary(Op::And, t, parse_tree("(< (col t.age) (val 90))"));
    ASSERT_EQ(full->height, 2);
    TreePtr b = balance_tree(full, 2);
    EXPECT_TRUE(tree_equal(b, full));
}

TEST(Balance, UnevenBinaryWrapsShorterChild) {
    // left child height 1, right child height 0 -> right gets one Keep
    TreePtr l = parse_tree("(> (col t.age) (val 60))");
    TreePtr r = make_col("t.name");
    TreePtr t = make_binary(Op::Project, r, l);
    TreePtr b = balance_tree(t, 2);
    EXPECT_EQ(b->left->op, Op::Keep);
    EXPECT_TRUE(tree_equal(b->left->left, r));
    EXPECT_TRUE(tree_equal(b->right, l));
}

TEST(Balance, OverflowThrows) {
    TreePtr t = parse_tree("(> (col t.age) (val 60))");
    EXPECT_THROW(balance_tree(t, 0), std::runtime_error);
}

TEST(CollapseKeep, Examples) {
    TreePtr c = make_col("t.age");
    EXPECT_TRUE(tree_equal(collapse_keep(make_unary(Op::Keep, make_unary(Op::Keep, c))), c));
    TreePtr t = parse_tree("(> (col t.age) (val 60))");
    EXPECT_TRUE(tree_equal(collapse_keep(t), t));
}

TEST(CollapseKeep, RoundTripProperty) {
    Rng rng = make_rng(7);
    for (int i = 0; i < 200; ++i) {
        TreePtr t = random_keep_free_tree(rng, 4);
        int h = t->height + static_cast<int>(rng() % 3);
        TreePtr b = balance_tree(t, h);
        EXPECT_EQ(b->height, h);
        EXPECT_TRUE(tree_equal(collapse_keep(b), t)) << format_tree(t);
    }
}

TEST(EnumerateSubtrees, Counts) {
    EXPECT_EQ(enumerate_subtrees(make_col("t.a")).size(), 1u);
    TreePtr t = parse_tree("(> (col t.age) (val 60))");
    EXPECT_EQ(enumerate_subtrees(t).size(), 3u);
    // additivity over a two-tree case set
    TreePtr t5 = parse_tree("(project (col t.n) (> (col t.age) (val 60)))");
    TreePtr t7 = parse_tree("(and (> (col t.age) (val 60)) (< (col t.b) (val 9)))");
    ASSERT_EQ(node_count(t5), 5u);
    ASSERT_EQ(node_count(t7), 7u);
    EXPECT_EQ(enumerate_subtrees(t5).size() + enumerate_subtrees(t7).size(), 12u);
}

TEST(EnumerateSubtrees, LengthEqualsNodeCountProperty) {
    Rng rng = make_rng(11);
    for (int i = 0; i < 100; ++i) {
        TreePtr t = random_tree(rng, 5);
        if (node_count(t) > 31) continue;
        EXPECT_EQ(enumerate_subtrees(t).size(), node_count(t));
    }
}

TEST(Ted, Trivials) {
    TreePtr a = parse_tree("(> (col t.age) (val 60))");
    TreePtr a2 = parse_tree("(> (col t.age) (val 80))");
    TreePtr b = parse_tree("(>= (col t.age) (val 60))");
    EXPECT_DOUBLE_EQ(tree_edit_distance(a, a), 0.0);
    EXPECT_DOUBLE_EQ(tree_edit_distance(a, a2), 0.0);  // leaf values ignored
    EXPECT_DOUBLE_EQ(tree_edit_distance(a, b), 1.0 / 3.0);
}

TEST(Ted, MatchesOracleOnSmallTrees) {
    auto trees = enumerate_small_trees(4);
    for (size_t i = 0; i < trees.size(); ++i) {
        for (size_t j = i; j < trees.size(); ++j) {
            double fast = tree_edit_distance(trees[i], trees[j]);
            double slow = ted_oracle(trees[i], trees[j]);
            ASSERT_DOUBLE_EQ(fast, slow)
                << format_tree(trees[i]) << " vs " << format_tree(trees[j]);
        }
    }
}

TEST(Ted, MetricPropertiesOnRandomSample) {
    Rng rng = make_rng(23);
    std::vector<TreePtr> sample;
    for (int i = 0; i < 12; ++i) sample.push_back(random_keep_free_tree(rng, 3));
    for (const auto& a : sample) {
        for (const auto& b : sample) {
            double d = tree_edit_distance(a, b);
            EXPECT_GE(d, 0.0);
            EXPECT_LE(d, 1.0);
            EXPECT_DOUBLE_EQ(d, tree_edit_distance(b, a));
            for (const auto& c : sample) {
                // raw TED satisfies the triangle inequality
                EXPECT_LE(tree_edit_distance_raw(a, c),
                          tree_edit_distance_raw(a, b) + tree_edit_distance_raw(b, c));
            }
        }
    }
}

TEST(Canonicalize, CommutativeAndWildcard) {
    TreePtr ab = parse_tree("(and (> (col t.a) (val 1)) (< (col t.b) (val 2)))");
    TreePtr ba = parse_tree("(and (< (col t.b) (val 2)) (> (col t.a) (val 1)))");
    EXPECT_TRUE(tree_equal(canonicalize(ab), canonicalize(ba)));

    TreePtr v60 = parse_tree("(> (col t.age) (val 60))");
    TreePtr v80 = parse_tree("(> (col t.age) (val 80))");
    EXPECT_TRUE(tree_equal(canonicalize(v60), canonicalize(v80)));

    TreePtr e1 = parse_tree("(except (col t.a) (col t.b))");
    TreePtr e2 = parse_tree("(except (col t.b) (col t.a))");
    EXPECT_FALSE(tree_equal(canonicalize(e1), canonicalize(e2)));
}

TEST(Canonicalize, IdempotentProperty) {
    Rng rng = make_rng(31);
    for (int i = 0; i < 200; ++i) {
        TreePtr t = random_tree(rng, 4);
        TreePtr c1 = canonicalize(t);
        TreePtr c2 = canonicalize(c1);
        EXPECT_TRUE(tree_equal(c1, c2)) << format_tree(t);
    }
}

TEST(Serialization, SpecExample) {
    const std::string s = "(> (col age) (val 60))";
    EXPECT_EQ(format_tree(parse_tree(s)), s);
}

TEST(Serialization, RoundTripProperty) {
    Rng rng = make_rng(37);
    for (int i = 0; i < 300; ++i) {
        TreePtr t = random_tree(rng, 4);
        std::string s = format_tree(t);
        TreePtr back = parse_tree(s);
        EXPECT_TRUE(tree_equal(t, back));
        EXPECT_EQ(format_tree(back), s);  // bit-exact re-serialization
    }
}

TEST(Serialization, QuotedStringsAndWildcard) {
    TreePtr t = make_binary(Op::Eq, make_col("person.name"), make_val(std::string("an \"odd\" name")));
    std::string s = format_tree(t);
    EXPECT_TRUE(tree_equal(parse_tree(s), t));
    EXPECT_EQ(format_tree(parse_tree("(val *)")), "(val *)");
    EXPECT_THROW(parse_tree("(bogus (col a))"), std::runtime_error);
    EXPECT_THROW(parse_tree("(> (col a) (val 60)"), std::runtime_error);
}

TEST(Typing, AdmissibilityTable) {
    EXPECT_EQ(tree_type(parse_tree("(> (col t.age) (val 60))")), TreeType::Rel);
    EXPECT_EQ(tree_type(parse_tree("(> (col t.age) (col t.b))")), TreeType::Invalid);
    EXPECT_EQ(tree_type(parse_tree("(count (tab t))")), TreeType::AggRel);
    EXPECT_EQ(tree_type(parse_tree("(groupby (col t.d) (count (tab t)))")), TreeType::Rel);
    EXPECT_EQ(tree_type(parse_tree("(groupby (col t.d) (tab t))")), TreeType::Invalid);
    EXPECT_EQ(tree_type(parse_tree("(limit1 (order_desc (col t.age)))")), TreeType::Rel);
    EXPECT_EQ(tree_type(parse_tree("(limit1 (col t.age))")), TreeType::Invalid);
    // Keep is transparent to typing
    EXPECT_EQ(tree_type(parse_tree("(groupby (keep (col t.d)) (count (keep (tab t))))")),
              TreeType::Rel);
}
