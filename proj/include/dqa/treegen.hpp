#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dqa/autograd.hpp"
#include "dqa/errors.hpp"

namespace dqa {

enum class OpKind { Add, Sub, Mul, Div };
const char* op_symbol(OpKind k);

// Where a leaf's embedding comes from at decode time. Literal leaves exist
// only in freshly parsed derivations, before alignment against the document.
struct LeafSource {
    enum class Kind { Literal, Constant, Tagged };
    Kind kind = Kind::Literal;
    int index = -1;  // constant index into V_con, or position in V_tag
    bool operator==(const LeafSource&) const = default;
};

struct ExprNode;
using ExprTree = std::shared_ptr<const ExprNode>;

struct ExprNode {
    bool is_op = false;
    // operator payload
    OpKind op = OpKind::Add;
    ExprTree left, right;
    // leaf payload
    double value = 0.0;
    LeafSource source;
};

ExprTree make_leaf(double value, LeafSource source = {});
ExprTree make_op(OpKind op, ExprTree left, ExprTree right);

int node_count(const ExprTree& t);
bool trees_equal(const ExprTree& a, const ExprTree& b);
std::string tree_to_infix(const ExprTree& t);

// Recursive evaluation; Sub and Div apply left-to-right. Throws
// division_by_zero when a right divisor evaluates to exactly zero.
double execute(const ExprTree& t);

// expr := term (('+'|'-') term)* ; term := factor (('*'|'/') factor)* ;
// factor := number | '(' expr ')' | '-' factor. Unicode minus, times and
// divide signs are accepted. Numbers may contain commas and a decimal point.
ExprTree parse_derivation(const std::string& infix);

struct TreeTok {
    bool is_op = false;
    OpKind op = OpKind::Add;
    double value = 0.0;
    LeafSource source;
    bool operator==(const TreeTok&) const = default;
};

std::vector<TreeTok> preorder(const ExprTree& t);
ExprTree tree_of_preorder(const std::vector<TreeTok>& toks);
std::string preorder_to_json(const std::vector<TreeTok>& toks);

// one tagged document number: absolute token index in the input sequence and
// the row of the encoded matrix carrying its contextual representation
struct TaggedNumber {
    int token_index = 0;
    double value = 0.0;
    bool operator==(const TaggedNumber&) const = default;
};

// V_dec = V_op + V_con + V_tag, in that id order.
struct TreeVocabulary {
    static constexpr int kNumOps = 4;
    std::vector<double> constants;
    std::vector<TaggedNumber> tagged;

    int size() const {
        return kNumOps + static_cast<int>(constants.size()) +
               static_cast<int>(tagged.size());
    }
    int constant_id(int k) const { return kNumOps + k; }
    int tagged_id(int m) const {
        return kNumOps + static_cast<int>(constants.size()) + m;
    }
    bool is_op_id(int id) const { return id < kNumOps; }
    std::optional<int> find_constant(double v) const;
};

// Maps an aligned tree (Constant/Tagged leaf sources) to decoder token ids in
// pre-order. Throws error on Literal leaves.
std::vector<int> preorder_token_ids(const ExprTree& t, const TreeVocabulary& vocab);

struct TreeCandidate {
    ExprTree tree;
    double log_prob = 0.0;
};

// Goal-driven pre-order decoder. Operator and constant embeddings are learned
// tables; tagged-number embeddings are the encoded document rows themselves.
class TreeDecoder {
public:
    TreeDecoder(nn::ParamStore& store, int hidden, int n_constants);

    static void define_params(nn::ParamStore& store, int hidden, int n_constants);

    // decoder vocabulary embedding matrix on this tape: rows follow
    // TreeVocabulary id order
    nn::Var vocab_embeddings(nn::Tape& t, nn::Var encoded,
                             const TreeVocabulary& vocab) const;

    // summed NLL over the gold pre-order under teacher forcing
    nn::Var teacher_loss(nn::Tape& t, nn::Var cls, nn::Var doc_rows_mat,
                         nn::Var vocab_emb, const TreeVocabulary& vocab,
                         const std::vector<int>& gold_ids, int node_cap) const;

    // Beam decode. Runs widths 1..beam and merges their completed pools, so
    // the best returned score is non-decreasing in `beam`. Results sorted by
    // descending score, deduplicated by emitted token sequence.
    std::vector<TreeCandidate> generate(nn::Tape& t, nn::Var cls, nn::Var doc_rows_mat,
                                        nn::Var vocab_emb, const TreeVocabulary& vocab,
                                        int beam, int node_cap) const;

private:
    struct Pending {
        nn::Var parent_goal;
        nn::Var op_emb;
        int op_id = 0;
        nn::Var left_emb;
        bool left_set = false;
    };
    struct State {
        nn::Var goal;
        std::vector<Pending> stack;
        std::vector<int> emitted;
        double log_prob = 0.0;
        bool done = false;
        int owed() const {
            int n = 0;
            for (const Pending& p : stack)
                if (!p.left_set) ++n;
            return n;
        }
    };

    // attention context of the goal over document rows
    nn::Var context(nn::Tape& t, nn::Var goal, nn::Var doc_rows_mat) const;
    nn::Var step_log_probs(nn::Tape& t, const State& s, nn::Var doc_rows_mat,
                           nn::Var vocab_emb, nn::Var& ctx_out, int vocab_size,
                           int node_cap) const;
    void transition(nn::Tape& t, State& s, int token_id, nn::Var ctx,
                    nn::Var vocab_emb, const TreeVocabulary& vocab) const;
    std::vector<TreeCandidate> run_beam(nn::Tape& t, nn::Var cls, nn::Var doc_rows_mat,
                                        nn::Var vocab_emb, const TreeVocabulary& vocab,
                                        int width, int node_cap) const;
    ExprTree tree_from_ids(const std::vector<int>& ids,
                           const TreeVocabulary& vocab) const;

    nn::ParamStore& store_;
    int hidden_;
};

}  // namespace dqa
