#include "vmatflux/nn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace vmatflux::nn {

std::string shape_string(const Shape5& s) {
  std::ostringstream os;
  os << '(' << s[0] << ',' << s[1] << ',' << s[2] << ',' << s[3] << ',' << s[4] << ')';
  return os.str();
}

template <class T>
void check_finite(const Tensor5<T>& t, const char* where) {
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    if (!std::isfinite(t.data[i])) {
      throw std::runtime_error(std::string("non-finite value in ") + where + " at flat index " + std::to_string(i));
    }
  }
}

template <class T>
Param<T>& ParamSet<T>::add(const std::string& name, std::vector<int> shape, ParamInit init) {
  if (find(name) != nullptr) throw std::logic_error("duplicate parameter " + name);
  auto p = std::make_unique<Param<T>>();
  p->name = name;
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  p->shape = std::move(shape);
  p->init = init;
  p->value.assign(n, T(0));
  p->grad.assign(n, T(0));
  params_.push_back(std::move(p));
  return *params_.back();
}

template <class T>
Param<T>* ParamSet<T>::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <class T>
const Param<T>* ParamSet<T>::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <class T>
void ParamSet<T>::zero_grad() {
  for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <class T>
std::size_t ParamSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template void check_finite(const Tensor5<float>&, const char*);
template void check_finite(const Tensor5<double>&, const char*);
template class ParamSet<float>;
template class ParamSet<double>;

}  // namespace vmatflux::nn
