//! Typed async client for the review API.

use attrchain_core::review::{Annotation, AssessmentSummary, SamplePage, SamplePayload, SampleQuery, StatusFilter};
use reqwest::{StatusCode, Url};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid base url: {0}")]
    BaseUrl(String),
    #[error("server returned {status}: {message}")]
    Api { status: StatusCode, message: String },
    #[error(transparent)]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            Self::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

#[derive(Debug, Clone)]
pub struct ReviewClient {
    base: Url,
    http: reqwest::Client,
}

impl ReviewClient {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let mut base = Url::parse(base_url).map_err(|e| ClientError::BaseUrl(e.to_string()))?;
        if !base.path().ends_with('/') {
            base.set_path(&format!("{}/", base.path()));
        }
        Ok(Self {
            base,
            http: reqwest::Client::new(),
        })
    }

    fn url(&self, path: &str) -> Result<Url, ClientError> {
        self.base.join(path).map_err(|e| ClientError::BaseUrl(e.to_string()))
    }

    async fn decode<T: DeserializeOwned>(response: reqwest::Response) -> Result<T, ClientError> {
        let status = response.status();
        if status.is_success() {
            return Ok(response.json().await?);
        }
        let text = response.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
        Err(ClientError::Api { status, message })
    }

    pub async fn list_samples(&self, query: &SampleQuery) -> Result<SamplePage, ClientError> {
        let mut url = self.url("samples")?;
        {
            let mut pairs = url.query_pairs_mut();
            if let Some(h) = query.hop {
                pairs.append_pair("hop", &h.to_string());
            }
            if let Some(s) = query.status {
                pairs.append_pair(
                    "status",
                    match s {
                        StatusFilter::Annotated => "annotated",
                        StatusFilter::Unannotated => "unannotated",
                    },
                );
            }
            if let Some(a) = &query.annotator {
                pairs.append_pair("annotator", a);
            }
            if let Some(p) = query.page {
                pairs.append_pair("page", &p.to_string());
            }
            if let Some(p) = query.page_size {
                pairs.append_pair("page_size", &p.to_string());
            }
        }
        if url.query() == Some("") {
            url.set_query(None);
        }
        Self::decode(self.http.get(url).send().await?).await
    }

    pub async fn get_sample(&self, id: &str) -> Result<SamplePayload, ClientError> {
        let mut url = self.url("samples/")?;
        url.path_segments_mut()
            .map_err(|_| ClientError::BaseUrl("cannot be a base".into()))?
            .pop_if_empty()
            .push(id);
        Self::decode(self.http.get(url).send().await?).await
    }

    pub async fn submit(&self, annotation: &Annotation) -> Result<Annotation, ClientError> {
        Self::decode(self.http.post(self.url("annotations")?).json(annotation).send().await?).await
    }

    pub async fn summary(&self) -> Result<AssessmentSummary, ClientError> {
        Self::decode(self.http.get(self.url("summary")?).send().await?).await
    }
}
