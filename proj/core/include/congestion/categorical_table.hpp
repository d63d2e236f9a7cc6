#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace congestion {

// A named categorical variable with an ordered state list.
struct VariableSpec {
  std::string name;
  std::vector<std::string> states;

  int state_index(const std::string& state) const;  // -1 when absent
};

// Row-major table of state codes; -1 marks an unobserved cell.
struct CategoricalTable {
  std::vector<VariableSpec> variables;
  std::vector<std::string> row_ids;
  std::vector<int> codes;

  std::size_t rows() const { return row_ids.size(); }
  std::size_t cols() const { return variables.size(); }
  int at(std::size_t row, std::size_t col) const { return codes[row * cols() + col]; }
  int& at(std::size_t row, std::size_t col) { return codes[row * cols() + col]; }

  int column_index(const std::string& name) const;  // -1 when absent
  const VariableSpec& variable(const std::string& name) const;

  // Copy of the rows selected by index, in the given order.
  CategoricalTable select_rows(const std::vector<std::size_t>& rows) const;
};

}  // namespace congestion
