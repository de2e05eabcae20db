//! Chat-completion request shape and the completion trait the pure pipeline
//! stages are generic over.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Sampling temperature used for both instruction generation and
/// augmentation unless overridden.
pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RequestError {
    #[error("request has no messages")]
    NoMessages,
    #[error("first message must come from the system or the user")]
    BadFirstRole,
    #[error("temperature must be a finite non-negative number")]
    BadTemperature,
    #[error("max_tokens must be positive")]
    BadMaxTokens,
}

impl ChatRequest {
    /// Single user message at the default temperature. The model name is
    /// filled in by the backend when left empty.
    pub fn user(content: impl Into<String>) -> Self {
        ChatRequest {
            model: String::new(),
            messages: vec![Message {
                role: Role::User,
                content: content.into(),
            }],
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: None,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn validate(&self) -> Result<(), RequestError> {
        let first = self.messages.first().ok_or(RequestError::NoMessages)?;
        if first.role == Role::Assistant {
            return Err(RequestError::BadFirstRole);
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(RequestError::BadTemperature);
        }
        if self.max_tokens == Some(0) {
            return Err(RequestError::BadMaxTokens);
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

/// Anything that can answer a chat request.
pub trait Complete {
    type Error;

    fn complete(&self, req: &ChatRequest) -> Result<String, Self::Error>;
}

impl<T: Complete + ?Sized> Complete for &T {
    type Error = T::Error;

    fn complete(&self, req: &ChatRequest) -> Result<String, Self::Error> {
        (**self).complete(req)
    }
}
