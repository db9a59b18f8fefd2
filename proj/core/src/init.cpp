#include "rtaformer/init.hpp"

#include <cmath>

namespace rtaformer::init {

namespace {
double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }
}  // namespace

void trunc_normal_(torch::Tensor& t, double mean, double std, double lo, double hi) {
  torch::NoGradGuard no_grad;
  const double l = norm_cdf((lo - mean) / std);
  const double u = norm_cdf((hi - mean) / std);
  t.uniform_(2.0 * l - 1.0, 2.0 * u - 1.0);
  t.erfinv_();
  t.mul_(std * std::sqrt(2.0));
  t.add_(mean);
  t.clamp_(lo, hi);
}

namespace {

void init_one(torch::nn::Module* m) {
  {
    if (auto* lin = m->as<torch::nn::Linear>()) {
      trunc_normal_(lin->weight, 0.0, 0.02);
      if (lin->bias.defined()) lin->bias.zero_();
    } else if (auto* ln = m->as<torch::nn::LayerNorm>()) {
      ln->weight.fill_(1.0);
      ln->bias.zero_();
    } else if (auto* gn = m->as<torch::nn::GroupNorm>()) {
      gn->weight.fill_(1.0);
      gn->bias.zero_();
    } else if (auto* conv = m->as<torch::nn::Conv2d>()) {
      const auto& opt = conv->options;
      const auto k = opt.kernel_size();
      const double fan_out =
          static_cast<double>(k->at(0) * k->at(1) * opt.out_channels()) / opt.groups();
      conv->weight.normal_(0.0, std::sqrt(2.0 / fan_out));
      if (conv->bias.defined()) conv->bias.zero_();
    }
  }
}

}  // namespace

void pvt_init(torch::nn::Module& root) {
  torch::NoGradGuard no_grad;
  // modules(include_self=true) needs a shared_ptr owner, unavailable inside constructors.
  init_one(&root);
  for (auto& m : root.modules(/*include_self=*/false)) init_one(m.get());
}

}  // namespace rtaformer::init
