#include "tagguard/mir/printer.hpp"

#include <sstream>

namespace tagguard::mir {

namespace {

void print_operand(std::ostream& os, const Module& m, const Function& f,
                   const Operand& o) {
    switch (o.kind) {
        case Operand::Kind::Value:
            os << "%" << f.values[o.value].name;
            break;
        case Operand::Kind::Const:
            os << o.imm;
            break;
        case Operand::Kind::Null:
            os << "null";
            break;
        case Operand::Kind::Global:
            os << "@" << m.globals[o.index].name;
            break;
        case Operand::Kind::Func:
            os << "@" << m.functions[o.index].name;
            break;
        case Operand::Kind::None:
            os << "<none>";
            break;
    }
}

void print_init(std::ostream& os, const Module& m, const InitNode& n) {
    switch (n.kind) {
        case InitNode::Kind::Zero:
            os << "zeroinit";
            break;
        case InitNode::Kind::Int:
            os << n.int_value;
            break;
        case InitNode::Kind::Null:
            os << "null";
            break;
        case InitNode::Kind::GlobalAddr:
            os << "@" << m.globals[n.ref_index].name;
            if (n.addend > 0) os << " + " << n.addend;
            if (n.addend < 0) os << " - " << -n.addend;
            break;
        case InitNode::Kind::FuncAddr:
            os << "@" << m.functions[n.ref_index].name;
            break;
        case InitNode::Kind::Aggregate:
            os << "{";
            for (size_t i = 0; i < n.elems.size(); i++) {
                if (i) os << ", ";
                print_init(os, m, n.elems[i]);
            }
            os << "}";
            break;
    }
}

void print_one(std::ostream& os, const Module& m, const Function& f,
               const Instr& ins) {
    auto arg = [&](size_t i) -> const Operand& { return ins.args[i]; };
    auto emit_args = [&](size_t from, size_t to) {
        for (size_t i = from; i < to; i++) {
            if (i != from) os << ", ";
            print_operand(os, m, f, arg(i));
        }
    };
    if (ins.has_result()) os << "%" << f.values[ins.result].name << " = ";
    switch (ins.op) {
        case Opcode::Alloca:
            os << "alloca " << type_name(ins.type);
            if (ins.alloca_registered) os << ", register";
            break;
        case Opcode::Gep:
            os << "gep " << type_name(ins.type) << ", ";
            emit_args(0, 2);
            break;
        case Opcode::Load:
            os << "load " << type_name(ins.type) << ", ";
            print_operand(os, m, f, arg(0));
            break;
        case Opcode::Store:
            os << "store " << type_name(ins.type) << " ";
            print_operand(os, m, f, arg(0));
            os << ", ";
            print_operand(os, m, f, arg(1));
            break;
        case Opcode::Bitcast:
            os << "bitcast ";
            print_operand(os, m, f, arg(0));
            os << " to " << type_name(ins.type);
            break;
        case Opcode::PtrToInt:
            os << "ptrtoint ";
            print_operand(os, m, f, arg(0));
            os << " to " << type_name(ins.type);
            break;
        case Opcode::IntToPtr:
            os << "inttoptr ";
            print_operand(os, m, f, arg(0));
            os << " to " << type_name(ins.type);
            break;
        case Opcode::Phi:
            os << "phi " << type_name(ins.type) << " ";
            for (size_t i = 0; i < ins.args.size(); i++) {
                if (i) os << ", ";
                os << "[";
                print_operand(os, m, f, arg(i));
                os << ", " << f.blocks[ins.phi_blocks[i]].name << "]";
            }
            break;
        case Opcode::Select:
            os << "select " << type_name(ins.type) << " ";
            emit_args(0, 3);
            break;
        case Opcode::ICmp:
            os << "icmp " << pred_name(ins.pred) << " " << type_name(ins.type) << " ";
            emit_args(0, 2);
            break;
        case Opcode::PCmp:
            os << "pcmp " << pred_name(ins.pred) << " " << type_name(ins.type) << " ";
            emit_args(0, 2);
            break;
        case Opcode::BinOp:
            os << bin_name(ins.bin) << " " << type_name(ins.type) << " ";
            emit_args(0, 2);
            break;
        case Opcode::PSub:
            os << "psub " << type_name(ins.type) << " ";
            emit_args(0, 2);
            break;
        case Opcode::Br:
            os << "br " << f.blocks[ins.br_true].name;
            break;
        case Opcode::CondBr:
            os << "condbr ";
            print_operand(os, m, f, arg(0));
            os << ", " << f.blocks[ins.br_true].name << ", "
               << f.blocks[ins.br_false].name;
            break;
        case Opcode::Call:
            os << "call @" << m.functions[ins.callee].name << "(";
            emit_args(0, ins.args.size());
            os << ")";
            break;
        case Opcode::ICall:
            os << "icall ";
            print_operand(os, m, f, arg(0));
            os << "(";
            emit_args(1, ins.args.size());
            os << ")";
            break;
        case Opcode::IntrinsicCall:
            os << "intrinsic " << intrinsic_name(ins.intrinsic) << "(";
            emit_args(0, ins.args.size());
            os << ")";
            if (ins.check_dir != 0) os << (ins.check_dir == 2 ? ", write" : ", read");
            if (ins.has_result()) os << " : " << type_name(f.values[ins.result].type);
            break;
        case Opcode::Ret:
            os << "ret";
            if (!ins.args.empty()) {
                os << " ";
                print_operand(os, m, f, arg(0));
            }
            break;
    }
    if ((ins.op == Opcode::Phi || ins.op == Opcode::Select) && ins.synth_base_of) {
        os << ", sbof %" << f.values[*ins.synth_base_of].name;
    }
    if ((ins.op == Opcode::Load || ins.op == Opcode::Store) && ins.recover) {
        os << ", recover(%" << f.values[ins.recover->static_base].name << ", "
           << ins.recover->disp << ")";
    }
    if (!ins.loc.empty()) os << " ; !loc " << ins.loc;
}

}  // namespace

std::string print_instr(const Module& m, const Function& f, const Instr& ins) {
    std::ostringstream os;
    print_one(os, m, f, ins);
    return os.str();
}

std::string print_module(const Module& m) {
    std::ostringstream os;
    os << "; mir v1\n";
    if (m.checked) os << "checked\n";
    for (const Global& g : m.globals) {
        os << "global @" << g.name << " : " << type_name(g.type);
        if (g.init) {
            os << " = ";
            print_init(os, m, *g.init);
        }
        os << "\n";
    }
    for (const Function& f : m.functions) {
        os << "\nfunc @" << f.name << "(";
        for (uint32_t i = 0; i < f.num_params; i++) {
            if (i) os << ", ";
            os << "%" << f.values[i].name << ": " << type_name(f.values[i].type);
        }
        os << ") -> " << (f.ret_type ? type_name(f.ret_type) : "void") << " {\n";
        for (const Block& b : f.blocks) {
            os << b.name << ":\n";
            for (const Instr& ins : b.instrs) {
                os << "  ";
                print_one(os, m, f, ins);
                os << "\n";
            }
        }
        os << "}\n";
    }
    return os.str();
}

}  // namespace tagguard::mir
