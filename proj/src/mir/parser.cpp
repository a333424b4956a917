#include "tagguard/mir/parser.hpp"

#include <cctype>
#include <cstdlib>
#include <functional>
#include <map>
#include <unordered_map>

#include "tagguard/mir/validator.hpp"

namespace tagguard::mir {

namespace {

enum class Tok : uint8_t {
    Ident,      // bare word: keywords, opcodes, labels, type names
    Local,      // %name
    AtName,     // @name
    Int,        // integer literal
    Punct,      // single punctuation char, text in `text`
    Arrow,      // ->
    Newline,
    End,
};

struct Token {
    Tok kind = Tok::End;
    std::string text;
    int64_t ival = 0;
    SourceLoc loc;
};

class Lexer {
public:
    explicit Lexer(const std::string& src) : src_(src) {}

    Token next() {
        skip_space();
        Token t;
        t.loc = {line_, col()};
        if (pos_ >= src_.size()) {
            t.kind = Tok::End;
            return t;
        }
        char c = src_[pos_];
        if (c == '\n') {
            advance();
            t.kind = Tok::Newline;
            return t;
        }
        if (c == ';') {
            // comments run to end of line; a trailing `!loc` comment is kept
            size_t start = pos_ + 1;
            while (pos_ < src_.size() && src_[pos_] != '\n') advance();
            std::string body = trim(src_.substr(start, pos_ - start));
            if (body.rfind("!loc ", 0) == 0) pending_loc_ = body.substr(5);
            return next();
        }
        if (c == '%' || c == '@') {
            advance();
            t.kind = (c == '%') ? Tok::Local : Tok::AtName;
            t.text = lex_word();
            return t;
        }
        if (c == '-' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '>') {
            advance();
            advance();
            t.kind = Tok::Arrow;
            return t;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '-' && pos_ + 1 < src_.size() &&
             std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
            size_t start = pos_;
            if (c == '-') advance();
            while (pos_ < src_.size() &&
                   std::isalnum(static_cast<unsigned char>(src_[pos_]))) {
                advance();
            }
            t.kind = Tok::Int;
            t.text = src_.substr(start, pos_ - start);
            t.ival = std::strtoll(t.text.c_str(), nullptr, 0);
            return t;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.') {
            t.kind = Tok::Ident;
            t.text = lex_word();
            return t;
        }
        advance();
        t.kind = Tok::Punct;
        t.text = std::string(1, c);
        return t;
    }

    std::string take_pending_loc() {
        std::string s = std::move(pending_loc_);
        pending_loc_.clear();
        return s;
    }

private:
    void skip_space() {
        while (pos_ < src_.size() &&
               (src_[pos_] == ' ' || src_[pos_] == '\t' || src_[pos_] == '\r')) {
            advance();
        }
    }
    std::string lex_word() {
        size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
                src_[pos_] == '_' || src_[pos_] == '.')) {
            advance();
        }
        return src_.substr(start, pos_ - start);
    }
    void advance() {
        if (src_[pos_] == '\n') {
            line_++;
            line_start_ = pos_ + 1;
        }
        pos_++;
    }
    int col() const { return static_cast<int>(pos_ - line_start_) + 1; }
    static std::string trim(std::string s) {
        while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.pop_back();
        size_t i = 0;
        while (i < s.size() && s[i] == ' ') i++;
        return s.substr(i);
    }

    const std::string& src_;
    size_t pos_ = 0;
    int line_ = 1;
    size_t line_start_ = 0;
    std::string pending_loc_;
};

struct InstrAddr {
    size_t func, block, instr;
};

class Parser {
public:
    explicit Parser(const std::string& src) : lex_(src) {
        cur_ = lex_.next();
        peek_ = lex_.next();
    }

    ParseResult run() {
        ParseResult res;
        Module m;
        parse_module_body(m);
        if (diags_.empty()) resolve_pending(m);
        if (diags_.empty()) {
            DiagList fill = fill_operand_types(m);
            diags_.insert(diags_.end(), fill.begin(), fill.end());
        }
        if (!diags_.empty()) {
            res.diags = std::move(diags_);
            return res;
        }
        DiagList vdiags = validate_module(m);
        if (!vdiags.empty()) {
            res.diags = std::move(vdiags);
            return res;
        }
        res.module = std::move(m);
        return res;
    }

private:
    // -------- module --------

    void parse_module_body(Module& m) {
        skip_newlines();
        if (cur_.kind == Tok::Ident && cur_.text == "checked") {
            m.checked = true;
            bump();
            expect_eol();
        }
        while (diags_.empty()) {
            skip_newlines();
            if (cur_.kind == Tok::End) break;
            if (cur_.kind == Tok::Ident && cur_.text == "global") {
                parse_global(m);
            } else if (cur_.kind == Tok::Ident && cur_.text == "func") {
                parse_function(m);
            } else {
                error("expected 'global' or 'func'");
                return;
            }
        }
    }

    // -------- globals --------

    void parse_global(Module& m) {
        bump();
        std::string name = expect_at_name();
        expect_punct(":");
        const Type* ty = parse_type(m.types);
        if (!diags_.empty()) return;
        if (m.find_global(name) >= 0 || m.find_function(name) >= 0) {
            error("duplicate definition @" + name);
            return;
        }
        size_t gi = m.globals.size();
        m.globals.push_back({std::move(name), ty, std::nullopt});
        if (cur_.kind == Tok::Punct && cur_.text == "=") {
            bump();
            std::vector<size_t> path;
            m.globals[gi].init = parse_init(ty, gi, path);
        }
        expect_eol();
    }

    InitNode parse_init(const Type* ty, size_t gi, std::vector<size_t>& path) {
        InitNode n;
        if (cur_.kind == Tok::Ident && cur_.text == "zeroinit") {
            bump();
            return n;
        }
        if (cur_.kind == Tok::Ident && cur_.text == "null") {
            bump();
            if (!ty->is_pointer()) error("null initializer for non-pointer field");
            n.kind = InitNode::Kind::Null;
            return n;
        }
        if (cur_.kind == Tok::Int) {
            if (!ty->is_int()) error("integer initializer for non-integer field");
            n.kind = InitNode::Kind::Int;
            n.int_value = cur_.ival;
            bump();
            return n;
        }
        if (cur_.kind == Tok::AtName) {
            if (!ty->is_pointer()) error("address initializer for non-pointer field");
            n.kind = InitNode::Kind::GlobalAddr;  // fixed up during resolution
            pending_init_refs_.push_back({gi, path, cur_.text, cur_.loc});
            bump();
            if (cur_.kind == Tok::Punct && (cur_.text == "+" || cur_.text == "-")) {
                bool neg = cur_.text == "-";
                bump();
                if (cur_.kind != Tok::Int) {
                    error("expected byte offset after @name +/-");
                    return n;
                }
                n.addend = neg ? -cur_.ival : cur_.ival;
                bump();
            }
            return n;
        }
        if (cur_.kind == Tok::Punct && cur_.text == "{") {
            bump();
            n.kind = InitNode::Kind::Aggregate;
            size_t idx = 0;
            while (!(cur_.kind == Tok::Punct && cur_.text == "}")) {
                const Type* ft = nullptr;
                if (ty->is_struct() && idx < ty->fields.size()) {
                    ft = ty->fields[idx];
                } else if (ty->is_array() && idx < ty->count) {
                    ft = ty->elem;
                } else {
                    error("initializer does not match type " + type_name(ty));
                    return n;
                }
                path.push_back(idx);
                n.elems.push_back(parse_init(ft, gi, path));
                path.pop_back();
                if (!diags_.empty()) return n;
                idx++;
                if (cur_.kind == Tok::Punct && cur_.text == ",") bump();
                else break;
            }
            expect_punct("}");
            size_t want = ty->is_struct() ? ty->fields.size() : ty->count;
            if (diags_.empty() && n.elems.size() != want)
                error("initializer arity mismatch for " + type_name(ty));
            return n;
        }
        error("bad initializer");
        return n;
    }

    // -------- functions --------

    struct RawOperand {
        enum class Kind : uint8_t { Local, Int, Null, AtName };
        Kind kind = Kind::Int;
        std::string name;
        int64_t ival = 0;
        SourceLoc loc;
    };

    struct RawInstr {
        Instr ins;
        std::vector<RawOperand> raw_args;
        std::vector<std::string> raw_phi_blocks;
        std::string raw_sbof;
        std::string raw_recover_base;
        std::string br_label_true, br_label_false;
        SourceLoc loc;
    };

    void parse_function(Module& m) {
        bump();
        size_t func_idx = m.functions.size();
        Function f;
        f.name = expect_at_name();
        if (!diags_.empty()) return;
        if (m.find_function(f.name) >= 0 || m.find_global(f.name) >= 0) {
            error("duplicate definition @" + f.name);
            return;
        }
        expect_punct("(");
        if (!(cur_.kind == Tok::Punct && cur_.text == ")")) {
            while (diags_.empty()) {
                if (cur_.kind != Tok::Local) {
                    error("expected parameter %name");
                    return;
                }
                std::string pname = cur_.text;
                bump();
                expect_punct(":");
                const Type* pt = parse_type(m.types);
                if (!diags_.empty()) return;
                f.values.push_back({pname, pt, true});
                f.param_types.push_back(pt);
                if (cur_.kind == Tok::Punct && cur_.text == ",") bump();
                else break;
            }
        }
        expect_punct(")");
        expect_arrow();
        if (cur_.kind == Tok::Ident && cur_.text == "void") {
            bump();
        } else {
            f.ret_type = parse_type(m.types);
        }
        if (!diags_.empty()) return;
        f.num_params = static_cast<uint32_t>(f.values.size());
        expect_punct("{");
        expect_eol();

        std::vector<std::vector<RawInstr>> raw_blocks;
        std::unordered_map<std::string, BlockId> block_ids;
        while (diags_.empty()) {
            skip_newlines();
            if (cur_.kind == Tok::Punct && cur_.text == "}") {
                bump();
                break;
            }
            if (cur_.kind == Tok::End) {
                error("unterminated function body");
                return;
            }
            if (!(cur_.kind == Tok::Ident && peek_.kind == Tok::Punct &&
                  peek_.text == ":")) {
                error("expected block label");
                return;
            }
            std::string label = cur_.text;
            bump();
            bump();  // ':'
            expect_eol();
            if (block_ids.count(label)) {
                error("duplicate block label " + label);
                return;
            }
            block_ids[label] = static_cast<BlockId>(f.blocks.size());
            f.blocks.push_back({label, {}});
            raw_blocks.emplace_back();
            while (diags_.empty()) {
                skip_newlines();
                if (cur_.kind == Tok::Punct && cur_.text == "}") break;
                if (cur_.kind == Tok::Ident && peek_.kind == Tok::Punct &&
                    peek_.text == ":") {
                    break;
                }
                if (cur_.kind == Tok::End) {
                    error("unterminated function body");
                    return;
                }
                InstrAddr addr{func_idx, f.blocks.size() - 1, raw_blocks.back().size()};
                raw_blocks.back().push_back(parse_instr(m, f, addr));
            }
        }
        if (!diags_.empty()) return;
        if (f.blocks.empty()) {
            error("function @" + f.name + " has no blocks");
            return;
        }

        // resolve local names and labels now that every %def is known
        std::unordered_map<std::string, ValueId> vals;
        for (ValueId i = 0; i < f.values.size(); i++) {
            if (vals.count(f.values[i].name)) {
                error("duplicate SSA definition %" + f.values[i].name);
                return;
            }
            vals[f.values[i].name] = i;
        }
        for (size_t bi = 0; bi < raw_blocks.size(); bi++) {
            for (size_t ii = 0; ii < raw_blocks[bi].size(); ii++) {
                RawInstr& ri = raw_blocks[bi][ii];
                if (!resolve_raw(m, f, ri, vals, block_ids,
                                 InstrAddr{func_idx, bi, ii})) {
                    return;
                }
                f.blocks[bi].instrs.push_back(std::move(ri.ins));
            }
        }
        m.functions.push_back(std::move(f));
    }

    bool resolve_raw(Module& m, Function& f, RawInstr& ri,
                     const std::unordered_map<std::string, ValueId>& vals,
                     const std::unordered_map<std::string, BlockId>& block_ids,
                     InstrAddr addr) {
        for (const RawOperand& ro : ri.raw_args) {
            Operand o;
            switch (ro.kind) {
                case RawOperand::Kind::Local: {
                    auto it = vals.find(ro.name);
                    if (it == vals.end()) {
                        diags_.push_back({ro.loc, "unknown value %" + ro.name});
                        return false;
                    }
                    o = Operand::value_ref(it->second, nullptr);
                    break;
                }
                case RawOperand::Kind::Int:
                    o = Operand::constant(ro.ival, nullptr);
                    break;
                case RawOperand::Kind::Null:
                    o = Operand::null_ptr(nullptr);
                    break;
                case RawOperand::Kind::AtName:
                    o.kind = Operand::Kind::Global;  // provisional; fixed below
                    pending_at_refs_.push_back(
                        {addr, ri.ins.args.size(), ro.name, ro.loc});
                    break;
            }
            ri.ins.args.push_back(o);
        }
        for (const std::string& bl : ri.raw_phi_blocks) {
            auto it = block_ids.find(bl);
            if (it == block_ids.end()) {
                diags_.push_back({ri.loc, "unknown block " + bl});
                return false;
            }
            ri.ins.phi_blocks.push_back(it->second);
        }
        auto resolve_label = [&](const std::string& name, BlockId& out) {
            if (name.empty()) return true;
            auto it = block_ids.find(name);
            if (it == block_ids.end()) {
                diags_.push_back({ri.loc, "unknown block " + name});
                return false;
            }
            out = it->second;
            return true;
        };
        if (!resolve_label(ri.br_label_true, ri.ins.br_true)) return false;
        if (!resolve_label(ri.br_label_false, ri.ins.br_false)) return false;
        if (!ri.raw_sbof.empty()) {
            auto it = vals.find(ri.raw_sbof);
            if (it == vals.end()) {
                diags_.push_back({ri.loc, "unknown value %" + ri.raw_sbof});
                return false;
            }
            ri.ins.synth_base_of = it->second;
        }
        if (!ri.raw_recover_base.empty()) {
            auto it = vals.find(ri.raw_recover_base);
            if (it == vals.end()) {
                diags_.push_back({ri.loc, "unknown value %" + ri.raw_recover_base});
                return false;
            }
            ri.ins.recover->static_base = it->second;
        }
        return true;
    }

    RawInstr parse_instr(Module& m, Function& f, InstrAddr addr) {
        RawInstr ri;
        ri.loc = cur_.loc;
        Instr& ins = ri.ins;
        std::string result_name;
        if (cur_.kind == Tok::Local) {
            result_name = cur_.text;
            bump();
            expect_punct("=");
        }
        if (cur_.kind != Tok::Ident) {
            error("expected opcode");
            return ri;
        }
        std::string op = cur_.text;
        SourceLoc op_loc = cur_.loc;
        bump();
        TypeStore& ts = m.types;

        auto operand = [&]() {
            RawOperand ro;
            ro.loc = cur_.loc;
            if (cur_.kind == Tok::Local) {
                ro.kind = RawOperand::Kind::Local;
                ro.name = cur_.text;
                bump();
            } else if (cur_.kind == Tok::Int) {
                ro.kind = RawOperand::Kind::Int;
                ro.ival = cur_.ival;
                bump();
            } else if (cur_.kind == Tok::Ident && cur_.text == "null") {
                ro.kind = RawOperand::Kind::Null;
                bump();
            } else if (cur_.kind == Tok::AtName) {
                ro.kind = RawOperand::Kind::AtName;
                ro.name = cur_.text;
                bump();
            } else {
                error("expected operand");
            }
            ri.raw_args.push_back(std::move(ro));
        };
        auto comma = [&]() { expect_punct(","); };
        auto def_result = [&](const Type* t) {
            if (result_name.empty()) {
                diags_.push_back({op_loc, op + " requires a result name"});
                return;
            }
            ins.result = f.add_value(result_name, t);
        };
        auto no_result = [&]() {
            if (!result_name.empty())
                diags_.push_back({op_loc, op + " does not produce a result"});
        };

        if (op == "alloca") {
            ins.op = Opcode::Alloca;
            ins.type = parse_type(ts);
            if (!diags_.empty()) return ri;
            if (cur_.kind == Tok::Punct && cur_.text == ",") {
                bump();
                if (cur_.kind == Tok::Ident && cur_.text == "register") {
                    ins.alloca_registered = true;
                    bump();
                } else {
                    error("expected 'register'");
                    return ri;
                }
            }
            def_result(ts.ptr_ty(ins.type));
        } else if (op == "gep") {
            ins.op = Opcode::Gep;
            ins.type = parse_type(ts);
            comma();
            operand();
            comma();
            operand();
            def_result(ts.ptr_ty(ins.type));
        } else if (op == "load") {
            ins.op = Opcode::Load;
            ins.type = parse_type(ts);
            comma();
            operand();
            parse_recover_suffix(ri);
            def_result(ins.type);
        } else if (op == "store") {
            ins.op = Opcode::Store;
            ins.type = parse_type(ts);
            operand();
            comma();
            operand();
            parse_recover_suffix(ri);
            no_result();
        } else if (op == "bitcast" || op == "ptrtoint" || op == "inttoptr") {
            ins.op = op == "bitcast" ? Opcode::Bitcast
                   : op == "ptrtoint" ? Opcode::PtrToInt
                                      : Opcode::IntToPtr;
            operand();
            if (!(cur_.kind == Tok::Ident && cur_.text == "to")) {
                error("expected 'to'");
                return ri;
            }
            bump();
            ins.type = parse_type(ts);
            def_result(ins.type);
        } else if (op == "phi") {
            ins.op = Opcode::Phi;
            ins.type = parse_type(ts);
            while (diags_.empty()) {
                expect_punct("[");
                operand();
                comma();
                if (cur_.kind != Tok::Ident) {
                    error("expected block label in phi arm");
                    return ri;
                }
                ri.raw_phi_blocks.push_back(cur_.text);
                bump();
                expect_punct("]");
                if (cur_.kind == Tok::Punct && cur_.text == ",") {
                    bump();
                    if (cur_.kind == Tok::Ident && cur_.text == "sbof") {
                        parse_sbof(ri);
                        break;
                    }
                    continue;
                }
                break;
            }
            def_result(ins.type);
        } else if (op == "select") {
            ins.op = Opcode::Select;
            ins.type = parse_type(ts);
            operand();
            comma();
            operand();
            comma();
            operand();
            if (cur_.kind == Tok::Punct && cur_.text == ",") {
                bump();
                if (cur_.kind == Tok::Ident && cur_.text == "sbof") parse_sbof(ri);
                else error("expected sbof");
            }
            def_result(ins.type);
        } else if (op == "icmp" || op == "pcmp") {
            ins.op = op == "icmp" ? Opcode::ICmp : Opcode::PCmp;
            if (!parse_pred(ins.pred)) return ri;
            ins.type = parse_type(ts);
            operand();
            comma();
            operand();
            def_result(ts.i8());
        } else if (auto bk = bin_by_name(op)) {
            ins.op = Opcode::BinOp;
            ins.bin = *bk;
            ins.type = parse_type(ts);
            operand();
            comma();
            operand();
            def_result(ins.type);
        } else if (op == "psub") {
            ins.op = Opcode::PSub;
            ins.type = parse_type(ts);
            operand();
            comma();
            operand();
            def_result(ts.i64());
        } else if (op == "br") {
            ins.op = Opcode::Br;
            if (cur_.kind != Tok::Ident) {
                error("expected block label");
                return ri;
            }
            ri.br_label_true = cur_.text;
            bump();
            no_result();
        } else if (op == "condbr") {
            ins.op = Opcode::CondBr;
            operand();
            comma();
            if (cur_.kind != Tok::Ident) {
                error("expected block label");
                return ri;
            }
            ri.br_label_true = cur_.text;
            bump();
            comma();
            if (cur_.kind != Tok::Ident) {
                error("expected block label");
                return ri;
            }
            ri.br_label_false = cur_.text;
            bump();
            no_result();
        } else if (op == "call") {
            ins.op = Opcode::Call;
            std::string callee = expect_at_name();
            parse_call_args(operand);
            if (!result_name.empty()) ins.result = f.add_value(result_name, nullptr);
            pending_calls_.push_back({addr, callee, ri.loc});
        } else if (op == "icall") {
            ins.op = Opcode::ICall;
            operand();
            parse_call_args(operand);
            if (!result_name.empty()) ins.result = f.add_value(result_name, nullptr);
            pending_icalls_.push_back({addr, ri.loc});
        } else if (op == "intrinsic") {
            ins.op = Opcode::IntrinsicCall;
            if (cur_.kind != Tok::Ident) {
                error("expected intrinsic name");
                return ri;
            }
            auto iid = intrinsic_by_name(cur_.text);
            if (!iid) {
                error("unknown intrinsic " + cur_.text);
                return ri;
            }
            ins.intrinsic = *iid;
            bump();
            parse_call_args(operand);
            if (cur_.kind == Tok::Punct && cur_.text == "," &&
                peek_.kind == Tok::Ident &&
                (peek_.text == "read" || peek_.text == "write")) {
                bump();
                ins.check_dir = cur_.text == "write" ? 2 : 1;
                bump();
            }
            if (cur_.kind == Tok::Punct && cur_.text == ":") {
                bump();
                const Type* rt = parse_type(ts);
                if (!diags_.empty()) return ri;
                def_result(rt);
            } else if (!result_name.empty()) {
                error("intrinsic result requires a ': type' annotation");
                return ri;
            }
        } else if (op == "ret") {
            ins.op = Opcode::Ret;
            if (!(cur_.kind == Tok::Newline || cur_.kind == Tok::End)) operand();
            no_result();
        } else {
            diags_.push_back({op_loc, "unknown opcode " + op});
            return ri;
        }
        ins.loc = lex_.take_pending_loc();
        expect_eol();
        return ri;
    }

    void parse_call_args(const std::function<void()>& operand) {
        expect_punct("(");
        if (!(cur_.kind == Tok::Punct && cur_.text == ")")) {
            while (diags_.empty()) {
                operand();
                if (cur_.kind == Tok::Punct && cur_.text == ",") bump();
                else break;
            }
        }
        expect_punct(")");
    }

    void parse_sbof(RawInstr& ri) {
        bump();
        if (cur_.kind != Tok::Local) {
            error("expected %value after sbof");
            return;
        }
        ri.raw_sbof = cur_.text;
        bump();
    }

    void parse_recover_suffix(RawInstr& ri) {
        if (!(cur_.kind == Tok::Punct && cur_.text == "," &&
              peek_.kind == Tok::Ident && peek_.text == "recover")) {
            return;
        }
        bump();
        bump();
        expect_punct("(");
        if (cur_.kind != Tok::Local) {
            error("expected %value in recover");
            return;
        }
        ri.raw_recover_base = cur_.text;
        bump();
        expect_punct(",");
        if (cur_.kind != Tok::Int) {
            error("expected displacement in recover");
            return;
        }
        ri.ins.recover = RecoverInfo{kNoValue, cur_.ival};
        bump();
        expect_punct(")");
    }

    bool parse_pred(CmpPred& out) {
        static const std::map<std::string, CmpPred> preds = {
            {"eq", CmpPred::Eq},   {"ne", CmpPred::Ne},   {"slt", CmpPred::Slt},
            {"sle", CmpPred::Sle}, {"sgt", CmpPred::Sgt}, {"sge", CmpPred::Sge},
            {"ult", CmpPred::Ult}, {"ule", CmpPred::Ule}, {"ugt", CmpPred::Ugt},
            {"uge", CmpPred::Uge},
        };
        if (cur_.kind != Tok::Ident || !preds.count(cur_.text)) {
            error("expected comparison predicate");
            return false;
        }
        out = preds.at(cur_.text);
        bump();
        return true;
    }

    static std::optional<BinKind> bin_by_name(const std::string& s) {
        static const std::map<std::string, BinKind> bins = {
            {"add", BinKind::Add},   {"sub", BinKind::Sub},   {"mul", BinKind::Mul},
            {"sdiv", BinKind::SDiv}, {"udiv", BinKind::UDiv}, {"srem", BinKind::SRem},
            {"urem", BinKind::URem}, {"and", BinKind::And},   {"or", BinKind::Or},
            {"xor", BinKind::Xor},   {"shl", BinKind::Shl},   {"lshr", BinKind::LShr},
            {"ashr", BinKind::AShr},
        };
        auto it = bins.find(s);
        if (it == bins.end()) return std::nullopt;
        return it->second;
    }

    // -------- types --------

    const Type* parse_type(TypeStore& ts) {
        const Type* base = parse_type_base(ts);
        if (!base) return ts.i64();
        while (cur_.kind == Tok::Punct && cur_.text == "*") {
            bump();
            base = ts.ptr_ty(base);
        }
        return base;
    }

    const Type* parse_type_base(TypeStore& ts) {
        if (cur_.kind == Tok::Ident) {
            const std::string& s = cur_.text;
            if (s == "i8" || s == "i16" || s == "i32" || s == "i64") {
                uint32_t bits =
                    static_cast<uint32_t>(std::strtoul(s.c_str() + 1, nullptr, 10));
                bump();
                return ts.int_ty(bits);
            }
            if (s == "fn") {
                bump();
                expect_punct("(");
                std::vector<const Type*> params;
                if (!(cur_.kind == Tok::Punct && cur_.text == ")")) {
                    while (diags_.empty()) {
                        params.push_back(parse_type(ts));
                        if (cur_.kind == Tok::Punct && cur_.text == ",") bump();
                        else break;
                    }
                }
                expect_punct(")");
                expect_arrow();
                const Type* ret = nullptr;
                if (cur_.kind == Tok::Ident && cur_.text == "void") bump();
                else ret = parse_type(ts);
                return ts.func_ty(std::move(params), ret);
            }
        }
        if (cur_.kind == Tok::Punct && cur_.text == "(") {
            bump();
            const Type* inner = parse_type(ts);
            expect_punct(")");
            return inner;
        }
        if (cur_.kind == Tok::Punct && cur_.text == "[") {
            bump();
            if (cur_.kind != Tok::Int || cur_.ival < 0) {
                error("expected array length");
                return nullptr;
            }
            uint64_t count = static_cast<uint64_t>(cur_.ival);
            bump();
            if (!(cur_.kind == Tok::Ident && cur_.text == "x")) {
                error("expected 'x' in array type");
                return nullptr;
            }
            bump();
            const Type* elem = parse_type(ts);
            expect_punct("]");
            return ts.array_ty(count, elem);
        }
        if (cur_.kind == Tok::Punct && cur_.text == "{") {
            bump();
            std::vector<const Type*> fields;
            if (!(cur_.kind == Tok::Punct && cur_.text == "}")) {
                while (diags_.empty()) {
                    fields.push_back(parse_type(ts));
                    if (cur_.kind == Tok::Punct && cur_.text == ",") bump();
                    else break;
                }
            }
            expect_punct("}");
            return ts.struct_ty(std::move(fields));
        }
        error("expected type");
        return nullptr;
    }

    // -------- deferred resolution --------

    struct PendingCall {
        InstrAddr addr;
        std::string name;
        SourceLoc loc;
    };
    struct PendingICall {
        InstrAddr addr;
        SourceLoc loc;
    };
    struct PendingAtRef {
        InstrAddr addr;
        size_t arg_index;
        std::string name;
        SourceLoc loc;
    };
    struct PendingInitRef {
        size_t global_idx;
        std::vector<size_t> path;
        std::string name;
        SourceLoc loc;
    };

    static Instr& at(Module& m, InstrAddr a) {
        return m.functions[a.func].blocks[a.block].instrs[a.instr];
    }

    void resolve_pending(Module& m) {
        for (auto& pc : pending_calls_) {
            if (pc.addr.func >= m.functions.size()) continue;  // function aborted
            int fi = m.find_function(pc.name);
            if (fi < 0) {
                diags_.push_back({pc.loc, "unknown function @" + pc.name});
                continue;
            }
            Instr& ins = at(m, pc.addr);
            ins.callee = static_cast<uint32_t>(fi);
            Function& host = m.functions[pc.addr.func];
            if (ins.has_result()) {
                if (!m.functions[fi].ret_type) {
                    diags_.push_back({pc.loc, "void call cannot produce a result"});
                    continue;
                }
                host.values[ins.result].type = m.functions[fi].ret_type;
            }
        }
        for (auto& pr : pending_at_refs_) {
            if (pr.addr.func >= m.functions.size()) continue;
            Instr& ins = at(m, pr.addr);
            Operand& o = ins.args[pr.arg_index];
            int gi = m.find_global(pr.name);
            if (gi >= 0) {
                o = Operand::global_ref(static_cast<uint32_t>(gi),
                                        m.types.ptr_ty(m.globals[gi].type));
                continue;
            }
            int fi = m.find_function(pr.name);
            if (fi >= 0) {
                o = Operand::func_ref(
                    static_cast<uint32_t>(fi),
                    m.types.ptr_ty(m.functions[fi].func_type(m.types)));
                continue;
            }
            diags_.push_back({pr.loc, "unknown name @" + pr.name});
        }
        // icall result types may depend on other call results; iterate
        for (int round = 0; round < 8; round++) {
            bool changed = false;
            for (auto& pi : pending_icalls_) {
                if (pi.addr.func >= m.functions.size()) continue;
                Instr& ins = at(m, pi.addr);
                Function& host = m.functions[pi.addr.func];
                if (ins.args.empty()) continue;
                const Operand& callee = ins.args[0];
                const Type* ct = callee.is_value() ? host.values[callee.value].type
                                                   : callee.type;
                if (!ct) continue;
                if (!ct->is_function_pointer()) {
                    diags_.push_back({pi.loc, "icall callee is not a function pointer"});
                    continue;
                }
                if (ins.has_result() && !host.values[ins.result].type) {
                    if (!ct->pointee->ret) {
                        diags_.push_back({pi.loc, "void icall cannot produce a result"});
                        continue;
                    }
                    host.values[ins.result].type = ct->pointee->ret;
                    changed = true;
                }
            }
            if (!changed) break;
        }
        for (auto& pi : pending_icalls_) {
            if (pi.addr.func >= m.functions.size()) continue;
            Instr& ins = at(m, pi.addr);
            if (ins.has_result() &&
                !m.functions[pi.addr.func].values[ins.result].type) {
                diags_.push_back({pi.loc, "cannot type icall result"});
            }
        }
        for (auto& pir : pending_init_refs_) {
            InitNode* n = &*m.globals[pir.global_idx].init;
            for (size_t idx : pir.path) n = &n->elems[idx];
            int gi = m.find_global(pir.name);
            if (gi >= 0) {
                n->kind = InitNode::Kind::GlobalAddr;
                n->ref_index = static_cast<uint32_t>(gi);
                continue;
            }
            int fi = m.find_function(pir.name);
            if (fi >= 0) {
                n->kind = InitNode::Kind::FuncAddr;
                n->ref_index = static_cast<uint32_t>(fi);
                if (n->addend != 0)
                    diags_.push_back({pir.loc, "function address takes no offset"});
                continue;
            }
            diags_.push_back({pir.loc, "unknown name @" + pir.name});
        }
    }

    // -------- token plumbing --------

    void bump() {
        cur_ = peek_;
        peek_ = lex_.next();
    }
    void skip_newlines() {
        while (cur_.kind == Tok::Newline) bump();
    }
    void expect_eol() {
        if (cur_.kind == Tok::Newline) {
            bump();
            return;
        }
        if (cur_.kind == Tok::End) return;
        error("expected end of line");
    }
    void expect_punct(const std::string& p) {
        if (cur_.kind == Tok::Punct && cur_.text == p) {
            bump();
            return;
        }
        error("expected '" + p + "'");
    }
    void expect_arrow() {
        if (cur_.kind == Tok::Arrow) {
            bump();
            return;
        }
        error("expected '->'");
    }
    std::string expect_at_name() {
        if (cur_.kind != Tok::AtName) {
            error("expected @name");
            return "";
        }
        std::string s = cur_.text;
        bump();
        return s;
    }
    void error(const std::string& msg) {
        if (diags_.empty()) diags_.push_back({cur_.loc, msg});
    }

    Lexer lex_;
    Token cur_, peek_;
    DiagList diags_;
    std::vector<PendingCall> pending_calls_;
    std::vector<PendingICall> pending_icalls_;
    std::vector<PendingAtRef> pending_at_refs_;
    std::vector<PendingInitRef> pending_init_refs_;
};

}  // namespace

ParseResult parse_module(const std::string& text) {
    Parser p(text);
    return p.run();
}

}  // namespace tagguard::mir
