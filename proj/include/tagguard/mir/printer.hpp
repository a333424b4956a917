#pragma once

#include <string>

#include "tagguard/mir/module.hpp"

namespace tagguard::mir {

std::string print_module(const Module& m);
std::string print_instr(const Module& m, const Function& f, const Instr& ins);

}  // namespace tagguard::mir
