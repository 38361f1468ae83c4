#include "dqa/treegen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace dqa {

const char* op_symbol(OpKind k) {
    switch (k) {
        case OpKind::Add: return "+";
        case OpKind::Sub: return "-";
        case OpKind::Mul: return "*";
        case OpKind::Div: return "/";
    }
    return "?";
}

ExprTree make_leaf(double value, LeafSource source) {
    auto n = std::make_shared<ExprNode>();
    n->is_op = false;
    n->value = value;
    n->source = source;
    return n;
}

ExprTree make_op(OpKind op, ExprTree left, ExprTree right) {
    auto n = std::make_shared<ExprNode>();
    n->is_op = true;
    n->op = op;
    n->left = std::move(left);
    n->right = std::move(right);
    return n;
}

int node_count(const ExprTree& t) {
    if (!t) return 0;
    if (!t->is_op) return 1;
    return 1 + node_count(t->left) + node_count(t->right);
}

bool trees_equal(const ExprTree& a, const ExprTree& b) {
    if (!a || !b) return !a && !b;
    if (a->is_op != b->is_op) return false;
    if (a->is_op)
        return a->op == b->op && trees_equal(a->left, b->left) &&
               trees_equal(a->right, b->right);
    return a->value == b->value && a->source == b->source;
}

std::string tree_to_infix(const ExprTree& t) {
    if (!t) return "";
    if (!t->is_op) {
        std::ostringstream os;
        os << t->value;
        return os.str();
    }
    return "(" + tree_to_infix(t->left) + " " + op_symbol(t->op) + " " +
           tree_to_infix(t->right) + ")";
}

double execute(const ExprTree& t) {
    if (!t->is_op) return t->value;
    double l = execute(t->left);
    double r = execute(t->right);
    switch (t->op) {
        case OpKind::Add: return l + r;
        case OpKind::Sub: return l - r;
        case OpKind::Mul: return l * r;
        case OpKind::Div:
            if (r == 0.0) throw division_by_zero("divisor evaluates to zero");
            return l / r;
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// infix derivation parser

namespace {

struct Lexer {
    enum class Kind { Num, Plus, Minus, Times, Div, LParen, RParen, End };
    struct Tok {
        Kind kind;
        double value = 0.0;
        size_t pos = 0;
    };

    explicit Lexer(const std::string& s) : s_(s) { advance(); }
    const Tok& peek() const { return tok_; }
    Tok take() {
        Tok t = tok_;
        advance();
        return t;
    }

private:
    void advance() {
        while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
        tok_.pos = i_;
        if (i_ >= s_.size()) {
            tok_.kind = Kind::End;
            return;
        }
        // multi-byte operators: U+2212 minus, U+00D7 times, U+00F7 divide
        auto starts = [&](const char* seq) {
            size_t len = std::strlen(seq);
            return s_.compare(i_, len, seq) == 0 ? len : 0;
        };
        if (size_t len = starts("\xe2\x88\x92")) {
            tok_.kind = Kind::Minus;
            i_ += len;
            return;
        }
        if (size_t len = starts("\xc3\x97")) {
            tok_.kind = Kind::Times;
            i_ += len;
            return;
        }
        if (size_t len = starts("\xc3\xb7")) {
            tok_.kind = Kind::Div;
            i_ += len;
            return;
        }
        char c = s_[i_];
        switch (c) {
            case '+': tok_.kind = Kind::Plus; ++i_; return;
            case '-': tok_.kind = Kind::Minus; ++i_; return;
            case '*': tok_.kind = Kind::Times; ++i_; return;
            case '/': tok_.kind = Kind::Div; ++i_; return;
            case '(': tok_.kind = Kind::LParen; ++i_; return;
            case ')': tok_.kind = Kind::RParen; ++i_; return;
            default: break;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::string digits;
            size_t start = i_;
            while (i_ < s_.size() &&
                   (std::isdigit(static_cast<unsigned char>(s_[i_])) || s_[i_] == ',' ||
                    s_[i_] == '.')) {
                if (s_[i_] != ',') digits.push_back(s_[i_]);
                ++i_;
            }
            if (i_ < s_.size() && std::isalpha(static_cast<unsigned char>(s_[i_])))
                throw parse_error("malformed number", start);
            if (digits.empty() || digits == ".")
                throw parse_error("malformed number", start);
            tok_.kind = Kind::Num;
            tok_.value = std::strtod(digits.c_str(), nullptr);
            return;
        }
        throw parse_error(std::string("unexpected character '") + c + "'", i_);
    }

    const std::string& s_;
    size_t i_ = 0;
    Tok tok_;
};

class Parser {
public:
    explicit Parser(const std::string& s) : lex_(s) {}

    ExprTree parse() {
        if (lex_.peek().kind == Lexer::Kind::End)
            throw parse_error("empty derivation", 0);
        ExprTree t = expr();
        if (lex_.peek().kind != Lexer::Kind::End)
            throw parse_error("trailing input after expression", lex_.peek().pos);
        return t;
    }

private:
    ExprTree expr() {
        ExprTree t = term();
        while (true) {
            auto k = lex_.peek().kind;
            if (k == Lexer::Kind::Plus || k == Lexer::Kind::Minus) {
                lex_.take();
                t = make_op(k == Lexer::Kind::Plus ? OpKind::Add : OpKind::Sub, t, term());
            } else {
                return t;
            }
        }
    }

    ExprTree term() {
        ExprTree t = factor();
        while (true) {
            auto k = lex_.peek().kind;
            if (k == Lexer::Kind::Times || k == Lexer::Kind::Div) {
                lex_.take();
                t = make_op(k == Lexer::Kind::Times ? OpKind::Mul : OpKind::Div, t,
                            factor());
            } else {
                return t;
            }
        }
    }

    ExprTree factor() {
        auto tok = lex_.peek();
        switch (tok.kind) {
            case Lexer::Kind::Num:
                lex_.take();
                return make_leaf(tok.value);
            case Lexer::Kind::Minus: {
                lex_.take();
                ExprTree inner = factor();
                if (!inner->is_op) return make_leaf(-inner->value, inner->source);
                // negate a parenthesized expression: 0 - expr
                return make_op(OpKind::Sub, make_leaf(0.0), inner);
            }
            case Lexer::Kind::LParen: {
                lex_.take();
                ExprTree t = expr();
                if (lex_.peek().kind != Lexer::Kind::RParen)
                    throw parse_error("unbalanced parenthesis", lex_.peek().pos);
                lex_.take();
                return t;
            }
            case Lexer::Kind::End:
                throw parse_error("dangling operator at end of input", tok.pos);
            default:
                throw parse_error("expected a number or '('", tok.pos);
        }
    }

    Lexer lex_;
};

}  // namespace

ExprTree parse_derivation(const std::string& infix) { return Parser(infix).parse(); }

std::vector<TreeTok> preorder(const ExprTree& t) {
    std::vector<TreeTok> out;
    std::function<void(const ExprTree&)> walk = [&](const ExprTree& n) {
        TreeTok tok;
        if (n->is_op) {
            tok.is_op = true;
            tok.op = n->op;
            out.push_back(tok);
            walk(n->left);
            walk(n->right);
        } else {
            tok.value = n->value;
            tok.source = n->source;
            out.push_back(tok);
        }
    };
    walk(t);
    return out;
}

namespace {
ExprTree build_preorder(const std::vector<TreeTok>& toks, size_t& i) {
    if (i >= toks.size())
        throw incomplete_preorder("pre-order ends before the tree is complete");
    const TreeTok& tok = toks[i++];
    if (!tok.is_op) return make_leaf(tok.value, tok.source);
    ExprTree left = build_preorder(toks, i);
    ExprTree right = build_preorder(toks, i);
    return make_op(tok.op, std::move(left), std::move(right));
}
}  // namespace

ExprTree tree_of_preorder(const std::vector<TreeTok>& toks) {
    size_t i = 0;
    ExprTree t = build_preorder(toks, i);
    if (i != toks.size())
        throw trailing_tokens(std::to_string(toks.size() - i) +
                              " token(s) left after a complete tree");
    return t;
}

std::string preorder_to_json(const std::vector<TreeTok>& toks) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const TreeTok& t : toks) {
        if (t.is_op)
            arr.push_back(op_symbol(t.op));
        else
            arr.push_back(t.value);
    }
    return arr.dump();
}

std::optional<int> TreeVocabulary::find_constant(double v) const {
    for (size_t i = 0; i < constants.size(); ++i)
        if (constants[i] == v) return static_cast<int>(i);
    return std::nullopt;
}

std::vector<int> preorder_token_ids(const ExprTree& t, const TreeVocabulary& vocab) {
    std::vector<int> ids;
    for (const TreeTok& tok : preorder(t)) {
        if (tok.is_op) {
            ids.push_back(static_cast<int>(tok.op));
        } else if (tok.source.kind == LeafSource::Kind::Constant) {
            ids.push_back(vocab.constant_id(tok.source.index));
        } else if (tok.source.kind == LeafSource::Kind::Tagged) {
            ids.push_back(vocab.tagged_id(tok.source.index));
        } else {
            throw error("tree has an unaligned literal leaf");
        }
    }
    return ids;
}

// ---------------------------------------------------------------------------
// goal-driven decoder

TreeDecoder::TreeDecoder(nn::ParamStore& store, int hidden, int n_constants)
    : store_(store), hidden_(hidden) {
    (void)n_constants;
}

void TreeDecoder::define_params(nn::ParamStore& store, int hidden, int n_constants) {
    store.define("tree.op_emb", TreeVocabulary::kNumOps, hidden);
    store.define("tree.con_emb", n_constants, hidden);
    store.define("tree.attn.w", hidden, hidden);
    store.define("tree.score.w", 2 * hidden, hidden);
    for (const char* gate : {"left", "right", "comb"}) {
        store.define(std::string("tree.") + gate + ".wg", 3 * hidden, hidden);
        store.define(std::string("tree.") + gate + ".bg", 1, hidden);
        store.define(std::string("tree.") + gate + ".wc", 3 * hidden, hidden);
        store.define(std::string("tree.") + gate + ".bc", 1, hidden);
    }
}

nn::Var TreeDecoder::vocab_embeddings(nn::Tape& t, nn::Var encoded,
                                      const TreeVocabulary& vocab) const {
    nn::Var emb = t.concat_rows(t.param(store_.get("tree.op_emb")),
                                t.param(store_.get("tree.con_emb")));
    if (!vocab.tagged.empty()) {
        std::vector<int> rows;
        rows.reserve(vocab.tagged.size());
        for (const TaggedNumber& tn : vocab.tagged) rows.push_back(tn.token_index);
        emb = t.concat_rows(emb, t.gather_rows(encoded, rows));
    }
    return emb;
}

nn::Var TreeDecoder::context(nn::Tape& t, nn::Var goal, nn::Var doc_rows_mat) const {
    nn::Var s = t.matmul(goal, t.param(store_.get("tree.attn.w")));  // 1 x H
    nn::Var scores = t.matmul_nt(s, doc_rows_mat);                   // 1 x Ld
    nn::Var probs = t.softmax_rows(scores);
    return t.matmul(probs, doc_rows_mat);  // 1 x H
}

namespace {
nn::Var gated(nn::Tape& t, nn::ParamStore& store, const std::string& prefix, nn::Var x) {
    nn::Var g = t.sigmoid(t.add_rowvec(t.matmul(x, t.param(store.get(prefix + ".wg"))),
                                       t.param(store.get(prefix + ".bg"))));
    nn::Var c = t.tanh(t.add_rowvec(t.matmul(x, t.param(store.get(prefix + ".wc"))),
                                    t.param(store.get(prefix + ".bc"))));
    return t.mul(g, c);
}
}  // namespace

nn::Var TreeDecoder::step_log_probs(nn::Tape& t, const State& s, nn::Var doc_rows_mat,
                                    nn::Var vocab_emb, nn::Var& ctx_out, int vocab_size,
                                    int node_cap) const {
    ctx_out = context(t, s.goal, doc_rows_mat);
    nn::Var feat = t.concat_cols(s.goal, ctx_out);                  // 1 x 2H
    nn::Var proj = t.matmul(feat, t.param(store_.get("tree.score.w")));  // 1 x H
    nn::Var logits = t.matmul_nt(proj, vocab_emb);                  // 1 x |V|
    const bool ops_allowed =
        static_cast<int>(s.emitted.size()) + 3 + s.owed() <= node_cap;
    if (!ops_allowed) {
        nn::Mat mask(1, vocab_size);
        for (int i = 0; i < TreeVocabulary::kNumOps; ++i) mask.d[i] = -1e30;
        logits = t.add(logits, t.input(std::move(mask)));
    }
    return t.log_softmax_rows(logits);
}

void TreeDecoder::transition(nn::Tape& t, State& s, int token_id, nn::Var ctx,
                             nn::Var vocab_emb, const TreeVocabulary& vocab) const {
    s.emitted.push_back(token_id);
    if (vocab.is_op_id(token_id)) {
        nn::Var op_emb = t.slice_rows(vocab_emb, token_id, token_id + 1);
        nn::Var x = t.concat_cols(t.concat_cols(s.goal, ctx), op_emb);
        Pending p;
        p.parent_goal = s.goal;
        p.op_emb = op_emb;
        p.op_id = token_id;
        s.stack.push_back(p);
        s.goal = gated(t, store_, "tree.left", x);
        return;
    }
    // leaf: fold completed subtrees upward
    nn::Var emb = t.slice_rows(vocab_emb, token_id, token_id + 1);
    while (true) {
        if (s.stack.empty()) {
            s.done = true;
            return;
        }
        Pending& top = s.stack.back();
        if (!top.left_set) {
            top.left_emb = emb;
            top.left_set = true;
            nn::Var x = t.concat_cols(t.concat_cols(top.parent_goal, top.left_emb),
                                      top.op_emb);
            s.goal = gated(t, store_, "tree.right", x);
            return;
        }
        nn::Var x = t.concat_cols(t.concat_cols(top.op_emb, top.left_emb), emb);
        emb = gated(t, store_, "tree.comb", x);
        s.stack.pop_back();
    }
}

nn::Var TreeDecoder::teacher_loss(nn::Tape& t, nn::Var cls, nn::Var doc_rows_mat,
                                  nn::Var vocab_emb, const TreeVocabulary& vocab,
                                  const std::vector<int>& gold_ids, int node_cap) const {
    State s;
    s.goal = cls;
    nn::Var total = t.zeros(1, 1);
    for (int gold : gold_ids) {
        nn::Var ctx;
        nn::Var logp = step_log_probs(t, s, doc_rows_mat, vocab_emb, ctx, vocab.size(),
                                      node_cap);
        total = t.sub(total, t.pick(logp, 0, gold));
        transition(t, s, gold, ctx, vocab_emb, vocab);
    }
    return total;
}

ExprTree TreeDecoder::tree_from_ids(const std::vector<int>& ids,
                                    const TreeVocabulary& vocab) const {
    std::vector<TreeTok> toks;
    toks.reserve(ids.size());
    for (int id : ids) {
        TreeTok tok;
        if (vocab.is_op_id(id)) {
            tok.is_op = true;
            tok.op = static_cast<OpKind>(id);
        } else if (id < vocab.kNumOps + static_cast<int>(vocab.constants.size())) {
            int k = id - vocab.kNumOps;
            tok.value = vocab.constants[k];
            tok.source = LeafSource{LeafSource::Kind::Constant, k};
        } else {
            int m = id - vocab.kNumOps - static_cast<int>(vocab.constants.size());
            tok.value = vocab.tagged[m].value;
            tok.source = LeafSource{LeafSource::Kind::Tagged, m};
        }
        toks.push_back(tok);
    }
    return tree_of_preorder(toks);
}

std::vector<TreeCandidate> TreeDecoder::run_beam(nn::Tape& t, nn::Var cls,
                                                 nn::Var doc_rows_mat, nn::Var vocab_emb,
                                                 const TreeVocabulary& vocab, int width,
                                                 int node_cap) const {
    State init;
    init.goal = cls;
    std::vector<State> states{init};
    const int vocab_size = vocab.size();
    // each live state emits one node per iteration, so node_cap bounds this
    for (int iter = 0; iter <= node_cap; ++iter) {
        bool any_live = false;
        for (const State& s : states) any_live = any_live || !s.done;
        if (!any_live) break;
        std::vector<State> expanded;
        for (State& s : states) {
            if (s.done) {
                expanded.push_back(std::move(s));
                continue;
            }
            nn::Var ctx;
            nn::Var logp =
                step_log_probs(t, s, doc_rows_mat, vocab_emb, ctx, vocab_size, node_cap);
            const nn::Mat& lp = t.val(logp);
            for (int id = 0; id < vocab_size; ++id) {
                if (lp.d[id] < -1e29) continue;  // masked
                State next = s;
                next.log_prob += lp.d[id];
                transition(t, next, id, ctx, vocab_emb, vocab);
                expanded.push_back(std::move(next));
            }
        }
        std::stable_sort(expanded.begin(), expanded.end(), [](const State& a, const State& b) {
            if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
            return a.emitted < b.emitted;
        });
        if (static_cast<int>(expanded.size()) > width) expanded.resize(width);
        states = std::move(expanded);
    }
    std::vector<TreeCandidate> out;
    for (const State& s : states)
        if (s.done) out.push_back({tree_from_ids(s.emitted, vocab), s.log_prob});
    return out;
}

std::vector<TreeCandidate> TreeDecoder::generate(nn::Tape& t, nn::Var cls,
                                                 nn::Var doc_rows_mat, nn::Var vocab_emb,
                                                 const TreeVocabulary& vocab, int beam,
                                                 int node_cap) const {
    if (beam < 1) throw error("beam width must be >= 1");
    std::vector<TreeCandidate> pool;
    std::vector<std::vector<int>> seen;
    for (int w = 1; w <= beam; ++w) {
        for (TreeCandidate& c : run_beam(t, cls, doc_rows_mat, vocab_emb, vocab, w,
                                         node_cap)) {
            std::vector<int> ids = preorder_token_ids(c.tree, vocab);
            if (std::find(seen.begin(), seen.end(), ids) != seen.end()) continue;
            seen.push_back(std::move(ids));
            pool.push_back(std::move(c));
        }
    }
    std::stable_sort(pool.begin(), pool.end(), [&](const TreeCandidate& a, const TreeCandidate& b) {
        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
        return preorder_token_ids(a.tree, vocab) < preorder_token_ids(b.tree, vocab);
    });
    return pool;
}

}  // namespace dqa
