#ifndef TDN_OPTIM_HPP
#define TDN_OPTIM_HPP

#include <cmath>
#include <span>
#include <vector>

namespace tdn {

struct AdamParams {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct RmsPropParams {
  double learning_rate = 1e-3;
  double decay = 0.99;
  double epsilon = 1e-8;
};

// Optimizer state for several parameter blocks. Blocks are addressed by the
// index they were registered with; call begin_step() once per update.
class Adam {
public:
  explicit Adam(AdamParams p = {}) : p_(p) {}

  std::size_t add_block(std::size_t size) {
    m_.emplace_back(size, 0.0);
    v_.emplace_back(size, 0.0);
    return m_.size() - 1;
  }

  void begin_step() { ++t_; }
  long step_count() const { return t_; }
  const AdamParams& params() const { return p_; }
  void set_learning_rate(double lr) { p_.learning_rate = lr; }

  // `lr_scale` multiplies the learning rate for this block only.
  void update(std::size_t block, std::span<double> x, std::span<const double> g, double lr_scale = 1.0) {
    auto& m = m_[block];
    auto& v = v_[block];
    const double lr = p_.learning_rate * lr_scale;
    const double c1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = p_.beta1 * m[i] + (1.0 - p_.beta1) * g[i];
      v[i] = p_.beta2 * v[i] + (1.0 - p_.beta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + p_.epsilon);
    }
  }

private:
  AdamParams p_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

class RmsProp {
public:
  explicit RmsProp(RmsPropParams p = {}) : p_(p) {}

  std::size_t add_block(std::size_t size) {
    sq_.emplace_back(size, 0.0);
    return sq_.size() - 1;
  }

  void begin_step() {}

  void update(std::size_t block, std::span<double> x, std::span<const double> g) {
    auto& s = sq_[block];
    for (std::size_t i = 0; i < x.size(); ++i) {
      s[i] = p_.decay * s[i] + (1.0 - p_.decay) * g[i] * g[i];
      x[i] -= p_.learning_rate * g[i] / (std::sqrt(s[i]) + p_.epsilon);
    }
  }

private:
  RmsPropParams p_;
  std::vector<std::vector<double>> sq_;
};

} // namespace tdn

#endif // TDN_OPTIM_HPP
