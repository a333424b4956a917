#include "tagguard/cli/gen.hpp"

#include <random>

#include "tagguard/mir/builder.hpp"

namespace tagguard::cli {

using namespace mir;

namespace {

struct Gen {
    Module m;
    std::mt19937_64 rng;
    uint32_t fill_fn = 0, sum_fn = 0, pick_fn = 0, cmp_fn = 0;
    int label = 0;

    explicit Gen(uint64_t seed) : rng(seed) {}

    int64_t rnd(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(rng() % static_cast<uint64_t>(hi - lo + 1));
    }

    std::string lbl(const std::string& base) {
        return base + std::to_string(label++);
    }

    // fill(p, n, c): p[i] = i * 3 + c over a guarded loop
    void make_fill() {
        TypeStore& ts = m.types;
        FunctionBuilder b(m, "fill", {ts.ptr_ty(ts.i64()), ts.i64(), ts.i64()}, nullptr);
        b.rename_param(0, "p");
        b.rename_param(1, "n");
        b.rename_param(2, "c");
        BlockId entry = b.make_block("entry");
        BlockId pre = b.make_block("pre");
        BlockId loop = b.make_block("loop");
        BlockId done = b.make_block("done");
        b.switch_to(entry);
        ValueId g = b.icmp(CmpPred::Sgt, ts.i64(), b.use(1), b.konst(0, ts.i64()), "g");
        b.condbr(b.use(g), pre, done);
        b.switch_to(pre);
        b.br(loop);
        b.switch_to(loop);
        ValueId i = b.phi(ts.i64(), {b.konst(0, ts.i64()), Operand()}, {pre, loop}, "i");
        ValueId t = b.binop(BinKind::Mul, ts.i64(), b.use(i), b.konst(3, ts.i64()), "t");
        ValueId v = b.binop(BinKind::Add, ts.i64(), b.use(t), b.use(2), "v");
        ValueId slot = b.gep(ts.i64(), b.use(0), b.use(i), "slot");
        b.store(ts.i64(), b.use(v), b.use(slot));
        ValueId inext = b.binop(BinKind::Add, ts.i64(), b.use(i), b.konst(1, ts.i64()), "inext");
        ValueId cont = b.icmp(CmpPred::Slt, ts.i64(), b.use(inext), b.use(1), "cont");
        b.function().blocks[loop].instrs[0].args[1] = b.use(inext);
        b.condbr(b.use(cont), loop, done);
        b.switch_to(done);
        b.ret_void();
        fill_fn = b.finish();
    }

    // sum(p, n): walks p with a loop-carried pointer phi
    void make_sum() {
        TypeStore& ts = m.types;
        FunctionBuilder b(m, "sum", {ts.ptr_ty(ts.i64()), ts.i64()}, ts.i64());
        b.rename_param(0, "p");
        b.rename_param(1, "n");
        BlockId entry = b.make_block("entry");
        BlockId pre = b.make_block("pre");
        BlockId loop = b.make_block("loop");
        BlockId done = b.make_block("done");
        b.switch_to(entry);
        ValueId g = b.icmp(CmpPred::Sgt, ts.i64(), b.use(1), b.konst(0, ts.i64()), "g");
        b.condbr(b.use(g), pre, done);
        b.switch_to(pre);
        b.br(loop);
        b.switch_to(loop);
        ValueId i = b.phi(ts.i64(), {b.konst(0, ts.i64()), Operand()}, {pre, loop}, "i");
        ValueId cur = b.phi(ts.ptr_ty(ts.i64()), {b.use(0), Operand()}, {pre, loop}, "cur");
        ValueId acc = b.phi(ts.i64(), {b.konst(0, ts.i64()), Operand()}, {pre, loop}, "acc");
        ValueId x = b.load(ts.i64(), b.use(cur), "x");
        ValueId acc2 = b.binop(BinKind::Add, ts.i64(), b.use(acc), b.use(x), "acc2");
        ValueId nxt = b.gep(ts.i64(), b.use(cur), b.konst(1, ts.i64()), "nxt");
        ValueId inext = b.binop(BinKind::Add, ts.i64(), b.use(i), b.konst(1, ts.i64()), "inext");
        ValueId c = b.icmp(CmpPred::Slt, ts.i64(), b.use(inext), b.use(1), "c");
        Function& f = b.function();
        f.blocks[loop].instrs[0].args[1] = b.use(inext);
        f.blocks[loop].instrs[1].args[1] = b.use(nxt);
        f.blocks[loop].instrs[2].args[1] = b.use(acc2);
        b.condbr(b.use(c), loop, done);
        b.switch_to(done);
        ValueId r = b.phi(ts.i64(), {b.konst(0, ts.i64()), b.use(acc2)}, {entry, loop}, "r");
        b.ret(b.use(r));
        sum_fn = b.finish();
    }

    // pick(c, p, q): select between two interior pointers, returned to caller
    void make_pick() {
        TypeStore& ts = m.types;
        const Type* p64 = ts.ptr_ty(ts.i64());
        FunctionBuilder b(m, "pick", {ts.i8(), p64, p64}, p64);
        b.rename_param(0, "c");
        b.rename_param(1, "p");
        b.rename_param(2, "q");
        b.make_block("entry");
        ValueId s = b.select(p64, b.use(0), b.use(1), b.use(2), "s");
        b.ret(b.use(s));
        pick_fn = b.finish();
    }

    void make_cmp() {
        TypeStore& ts = m.types;
        FunctionBuilder b(m, "bytecmp", {ts.byte_ptr(), ts.byte_ptr()}, ts.i32());
        b.rename_param(0, "a");
        b.rename_param(1, "b");
        BlockId entry = b.make_block("entry");
        BlockId lt = b.make_block("lt");
        BlockId ge = b.make_block("ge");
        b.switch_to(entry);
        ValueId ac = b.bitcast(b.use(0), ts.ptr_ty(ts.i64()), "ac");
        ValueId bc = b.bitcast(b.use(1), ts.ptr_ty(ts.i64()), "bc");
        ValueId av = b.load(ts.i64(), b.use(ac), "av");
        ValueId bv = b.load(ts.i64(), b.use(bc), "bv");
        ValueId c = b.icmp(CmpPred::Slt, ts.i64(), b.use(av), b.use(bv), "c");
        b.condbr(b.use(c), lt, ge);
        b.switch_to(lt);
        b.ret(b.konst(-1, ts.i32()));
        b.switch_to(ge);
        ValueId e = b.icmp(CmpPred::Eq, ts.i64(), b.use(av), b.use(bv), "e");
        ValueId r = b.select(ts.i32(), b.use(e), b.konst(0, ts.i32()),
                             b.konst(1, ts.i32()), "r");
        b.ret(b.use(r));
        cmp_fn = b.finish();
    }

    Module build() {
        make_fill();
        make_sum();
        make_pick();
        make_cmp();
        TypeStore& ts = m.types;

        // a global array with a deterministic initializer
        int64_t gn = rnd(4, 12);
        Global g;
        g.name = "table";
        g.type = ts.array_ty(static_cast<uint64_t>(gn), ts.i64());
        InitNode agg;
        agg.kind = InitNode::Kind::Aggregate;
        for (int64_t i = 0; i < gn; i++) {
            InitNode e;
            e.kind = InitNode::Kind::Int;
            e.int_value = rnd(-50, 50);
            agg.elems.push_back(e);
        }
        g.init = agg;
        m.globals.push_back(std::move(g));

        FunctionBuilder b(m, "main", {}, ts.i64());
        b.make_block("entry");
        int segments = static_cast<int>(rnd(3, 6));
        for (int s = 0; s < segments; s++) {
            switch (rnd(0, 5)) {
                case 0: seg_stack_array(b); break;
                case 1: seg_heap_array(b); break;
                case 2: seg_struct_field(b); break;
                case 3: seg_pointer_select(b); break;
                case 4: seg_global_walk(b); break;
                case 5: seg_qsort(b); break;
            }
        }
        b.ret(b.konst(0, ts.i64()));
        b.finish();
        return std::move(m);
    }

    // alloca array, fill via call (escape), walk with sum()
    void seg_stack_array(FunctionBuilder& b) {
        TypeStore& ts = m.types;
        int64_t n = rnd(2, 24);
        ValueId arr = b.alloca_of(ts.array_ty(n, ts.i64()), lbl("a"));
        ValueId p = b.bitcast(b.use(arr), ts.ptr_ty(ts.i64()), lbl("p"));
        b.call_void(fill_fn, {b.use(p), b.konst(n, ts.i64()),
                              b.konst(rnd(-9, 9), ts.i64())});
        int64_t k = rnd(0, n - 1);
        ValueId mid = b.gep(ts.i64(), b.use(p), b.konst(k, ts.i64()), lbl("mid"));
        ValueId s = b.call(sum_fn, {b.use(mid), b.konst(n - k, ts.i64())}, lbl("s"));
        b.intrinsic_void(Intrinsic::Print, {b.use(s)});
    }

    void seg_heap_array(FunctionBuilder& b) {
        TypeStore& ts = m.types;
        int64_t n = rnd(2, 16);
        ValueId raw = b.intrinsic(Intrinsic::Malloc, {b.konst(n * 8, ts.i64())},
                                  ts.byte_ptr(), lbl("raw"));
        ValueId p = b.bitcast(b.use(raw), ts.ptr_ty(ts.i64()), lbl("hp"));
        b.call_void(fill_fn, {b.use(p), b.konst(n, ts.i64()),
                              b.konst(rnd(0, 7), ts.i64())});
        ValueId s = b.call(sum_fn, {b.use(p), b.konst(n, ts.i64())}, lbl("hs"));
        b.intrinsic_void(Intrinsic::Print, {b.use(s)});
        if (rnd(0, 1)) {
            b.intrinsic_void(Intrinsic::Free, {b.use(raw)});
        }
    }

    // struct holding an interior pointer; store, reload, dereference
    void seg_struct_field(FunctionBuilder& b) {
        TypeStore& ts = m.types;
        int64_t n = rnd(3, 10);
        const Type* arr_t = ts.array_ty(n, ts.i64());
        const Type* box_t = ts.struct_ty({ts.i64(), ts.ptr_ty(ts.i64())});
        ValueId arr = b.alloca_of(arr_t, lbl("arr"));
        ValueId box = b.alloca_of(box_t, lbl("box"));
        ValueId p = b.bitcast(b.use(arr), ts.ptr_ty(ts.i64()), lbl("bp"));
        b.call_void(fill_fn, {b.use(p), b.konst(n, ts.i64()),
                              b.konst(rnd(1, 5), ts.i64())});
        int64_t k = rnd(0, n - 1);
        ValueId interior = b.gep(ts.i64(), b.use(p), b.konst(k, ts.i64()), lbl("in"));
        ValueId b8 = b.bitcast(b.use(box), ts.byte_ptr(), lbl("b8"));
        ValueId f8 = b.gep(ts.i8(), b.use(b8), b.konst(8, ts.i64()), lbl("f8"));
        ValueId fslot = b.bitcast(b.use(f8), ts.ptr_ty(ts.ptr_ty(ts.i64())), lbl("fs"));
        b.store(ts.ptr_ty(ts.i64()), b.use(interior), b.use(fslot));
        ValueId back = b.load(ts.ptr_ty(ts.i64()), b.use(fslot), lbl("bk"));
        ValueId val = b.load(ts.i64(), b.use(back), lbl("vl"));
        b.intrinsic_void(Intrinsic::Print, {b.use(val)});
    }

    void seg_pointer_select(FunctionBuilder& b) {
        TypeStore& ts = m.types;
        int64_t n = rnd(4, 12);
        ValueId arr = b.alloca_of(ts.array_ty(n, ts.i64()), lbl("sel"));
        ValueId p = b.bitcast(b.use(arr), ts.ptr_ty(ts.i64()), lbl("sp"));
        b.call_void(fill_fn, {b.use(p), b.konst(n, ts.i64()),
                              b.konst(rnd(0, 3), ts.i64())});
        int64_t i = rnd(0, n - 1), j = rnd(0, n - 1);
        ValueId pi = b.gep(ts.i64(), b.use(p), b.konst(i, ts.i64()), lbl("pi"));
        ValueId pj = b.gep(ts.i64(), b.use(p), b.konst(j, ts.i64()), lbl("pj"));
        ValueId flip = b.icmp(CmpPred::Slt, ts.i64(), b.konst(rnd(0, 9), ts.i64()),
                              b.konst(5, ts.i64()), lbl("fl"));
        ValueId chosen = b.call(pick_fn, {b.use(flip), b.use(pi), b.use(pj)}, lbl("ch"));
        ValueId v = b.load(ts.i64(), b.use(chosen), lbl("cv"));
        b.intrinsic_void(Intrinsic::Print, {b.use(v)});
        ValueId eq = b.pcmp(CmpPred::Eq, ts.ptr_ty(ts.i64()), b.use(chosen), b.use(pi),
                            lbl("pe"));
        ValueId eq64 = b.select(ts.i64(), b.use(eq), b.konst(1, ts.i64()),
                                b.konst(0, ts.i64()), lbl("pq"));
        b.intrinsic_void(Intrinsic::Print, {b.use(eq64)});
        ValueId d = b.psub(ts.ptr_ty(ts.i64()), b.use(pj), b.use(pi), lbl("pd"));
        b.intrinsic_void(Intrinsic::Print, {b.use(d)});
    }

    void seg_global_walk(FunctionBuilder& b) {
        TypeStore& ts = m.types;
        uint32_t gi = 0;  // single global table
        uint64_t n = m.globals[gi].type->count;
        ValueId p = b.bitcast(b.global(gi), ts.ptr_ty(ts.i64()), lbl("gw"));
        ValueId s = b.call(sum_fn,
                           {b.use(p), b.konst(static_cast<int64_t>(n), ts.i64())},
                           lbl("gs"));
        b.intrinsic_void(Intrinsic::Print, {b.use(s)});
    }

    void seg_qsort(FunctionBuilder& b) {
        TypeStore& ts = m.types;
        int64_t n = rnd(2, 8);
        ValueId arr = b.alloca_of(ts.array_ty(n, ts.i64()), lbl("q"));
        ValueId p = b.bitcast(b.use(arr), ts.ptr_ty(ts.i64()), lbl("qp"));
        for (int64_t i = 0; i < n; i++) {
            ValueId s = b.gep(ts.i64(), b.use(p), b.konst(i, ts.i64()), lbl("qs"));
            b.store(ts.i64(), b.konst(rnd(-99, 99), ts.i64()), b.use(s));
        }
        ValueId p8 = b.bitcast(b.use(p), ts.byte_ptr(), lbl("q8"));
        b.intrinsic_void(Intrinsic::Qsort,
                         {b.use(p8), b.konst(n, ts.i64()), b.konst(8, ts.i64()),
                          b.func_addr(cmp_fn)});
        ValueId s = b.call(sum_fn, {b.use(p), b.konst(n, ts.i64())}, lbl("qsum"));
        b.intrinsic_void(Intrinsic::Print, {b.use(s)});
        ValueId first = b.load(ts.i64(), b.use(p), lbl("qf"));
        b.intrinsic_void(Intrinsic::Print, {b.use(first)});
    }
};

}  // namespace

Module generate_safe_program(uint64_t seed) {
    Gen g(seed);
    return g.build();
}

}  // namespace tagguard::cli
