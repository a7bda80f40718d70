#pragma once

// YAML form of workload programs.
//
//   name: cipher_block
//   entry: main
//   sensitivity: 0.015        # stall per unit of relative extra misses
//   plain_mpki: 0.2           # misses per kilo-instruction outside loops
//   params:
//     N: {value: 400, train: [200, 300, 400], run: [350, 450]}
//   functions:
//     - name: main
//       local_params: []
//       body:
//         - work: 100000
//         - nest:
//             coeffs: [500, 0.1, 0.02]
//             noise: 0.05
//             loop:
//               id: L1
//               bound: {param: N}          # or {constant: 8}
//                                          # or {data: {mean: 50, stddev: 5, min: 1}}
//               start: 0
//               step: 1
//               body:
//                 - work: 1000
//                 - loop: {id: L2, bound: {constant: 16}, body: [{work: 50}]}
//                 - call: {target: helper, probability: 0.5}
//         - call: {target: recurse, rounds: {param: R}}

#include <stdexcept>
#include <string>

#include "biscuit/workload.hpp"

namespace biscuit {

/// Malformed configuration or program file; the message carries the line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Program parse_program(const std::string& yaml_text);
Program load_program(const std::string& path);
std::string dump_program(const Program& program);

}  // namespace biscuit
