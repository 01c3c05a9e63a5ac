#pragma once

#include <stdexcept>
#include <string>

namespace nvv {

/// Shapes, widths or settings that cannot work together.
class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation precondition (negative density, bad index...).
class contract_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Values outside what the codec can represent.
class range_error : public std::range_error {
 public:
  using std::range_error::range_error;
};

/// Malformed bitstream, manifest or image file.
class format_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nvv
