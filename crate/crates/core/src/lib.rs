pub mod discovery;
pub mod graph_store;
pub mod kg_client;
pub mod materializer;
pub mod planner;
pub mod query_gen;
pub mod tabular;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/backends.md")]
    mod backends {}
    #[doc = include_str!("../../../book/src/discovery.md")]
    mod discovery {}
    #[doc = include_str!("../../../book/src/join-plans.md")]
    mod join_plans {}
    #[doc = include_str!("../../../book/src/materializing.md")]
    mod materializing {}
    #[doc = include_str!("../../../docs/query-dialect.md")]
    mod query_dialect {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
