#pragma once

// Term lists used by the dictionary approach. The AI list is the 60-term
// core list; the long form of tf-idf is carried as a naming variant.

#include <string_view>
#include <utility>

namespace scholarpipe::lexicon::builtin {

inline constexpr std::string_view kAiTerms =
    "artificial neural network; artificial neural networks; computer vision; convolutional "
    "neural network; convolutional neural networks; deep learning; deep neural network; "
    "deep neural networks; image classification; image recognition; large language model; "
    "large language models; machine learning; natural language processing; neural network; "
    "neural networks; optical character recognition; perceptron; random forest; random "
    "forests; recurrent neural network; recurrent neural networks; reinforcement learning; "
    "self-learning model; self-learning models; supervised learning; support vector "
    "machine; training data; training model; training models; transformer model; "
    "transformer models; unsupervised learning; activation layer; activation layers; base "
    "tuning; text embedding; text embeddings; explainable ai; f1 score; federated learning; "
    "few-shot learning; zero-shot learning; fine tuning; genetic algorithms; instruct "
    "tuning; lstm network; lstm networks; mixture of experts; naive bayes; pre-trained "
    "embeddings; pre-trained models; quantum machine learning; quantumization; "
    "retrieval-augmented generation; reasoning models; retrieval interleaved generation; "
    "softmax; swarm intelligence; tf-idf";

inline constexpr std::string_view kLinearModelTerms =
    "fixed effects model; fixed effects models; instrumental variable; randomized control "
    "trial; randomized control trials; regression discontinuity; analysis of variance; "
    "analyses of variance; anova; anovas; generalized linear model; generalized linear "
    "models; hierarchical model; hierarchical models; linear model; linear models; linear "
    "probability model; linear probability models; linear regression; linear regressions; "
    "logistic model; logistic models; logistic regression; logistic regressions; logit "
    "model; logit models; multilevel model; multilevel models; multilevel regression model; "
    "multilevel regression models; multinomial model; multinomial models; multinomial "
    "regression model; multinomial regression models; multivariate model; multivariate "
    "models; negative binomial model; negative binomial models; ordinary least squares "
    "regression; poisson model; a poisson model; poisson models; poisson regression; a "
    "poisson regression; poisson regressions; probit model; probit models; probit "
    "regression; probit regressions; regression analysis; regression analyses; regression "
    "model; regression models; survival analysis; survival analyses; time series model; "
    "time series models; zero-inflated negative binomial model; zero-inflated negative "
    "binomial models; zero-inflated poisson model; zero-inflated poisson models; "
    "accelerated time failure model; accelerated time failure models; age-period-cohort "
    "model; age-period-cohort models; arima model; arima models; autoregressive integrated "
    "moving average model; autoregressive integrated moving average models; cox model; cox "
    "models; cox regression; cox regressions; cox regression model; cox regression models; "
    "generalized additive model; generalized additive models; hazard model; hazard models; "
    "propensity score matching; proportional hazard model; proportional hazard models; "
    "random effects model; random effects models; sars model; sars models; species-area "
    "relationship model; species-area relationship models; ols; difference in difference; "
    "difference-in-difference; control for; controlling for; regression; log-linear model; "
    "log-linear models; log-log model; log-log models; manova; lasso regression; mixed "
    "effects model; multinomial logistic regression; multinomial logistic regressions; "
    "nonparametric regression; nonparametric regressions; ologit; ordered logit; quantile "
    "regression; quantile regressions; ridge regression; ridge regressions; robust "
    "regression; tobit; nested model; nested models; multi-level model; multi-level models; "
    "multi-level regression model; multi-level regression models; ancova";

inline constexpr std::string_view kOtherStatsTerms =
    "factorial analysis; factorial analyses; geometric data analysis; geometric data "
    "analyses; multivariate descriptive statistics; multivariate descriptive model; "
    "multivariate descriptive models; cluster analysis; cluster analyses; correspondence "
    "analysis; correspondence analyses; discriminant analysis; discriminant analyses; "
    "latent class analysis; latent class analyses; model-based cluster analysis; "
    "model-based cluster analyses; multiple correspondence analysis; multiple "
    "correspondence analyses; multiple factorial analysis; multiple factorial analyses; "
    "principal component analysis; principal component analyses; agent based modelling; "
    "network analysis; network analyses; sequence analysis; sequence analyses; simulation; "
    "simulations; gibbs sampler; gibbs sampling; markov chain; markov chains; markov chain "
    "monte carlo; optimal matching; agent-based modelling; qualitative comparative "
    "analysis; qualitative comparative analyses; agent-based modeling; agent based "
    "modeling; individual-based modeling; multi-agent-based modeling; individual-based "
    "modelling; multi-agent-based modelling; microsimulation; agent-based; multi-agent "
    "model; multi-agent models";

// Naming variants that no spelling or plural rule can derive.
inline constexpr std::pair<std::string_view, std::string_view> kNamingVariants[] = {
    {"tf-idf", "term frequency-inverse document frequency"},
    {"anova", "analysis of variance"},
    {"ols", "ordinary least squares"},
    {"arima model", "autoregressive integrated moving average model"},
    {"lstm network", "long short-term memory network"},
};

}  // namespace scholarpipe::lexicon::builtin
