// DOM rendering for the player. One container is re-rendered per screen;
// state lives in the controller.

import type { Api, GameSummary } from "./api.js";
import type { PlayController, Screen } from "./controller.js";

const FALLBACK_ASSET_ID = "_fallback";

export class GameListView {
    constructor(private root: HTMLElement,
                private onPick: (storyId: string) => void) {}

    render(games: GameSummary[]): void {
        this.root.innerHTML = "";
        const heading = document.createElement("h1");
        heading.textContent = "Pick a story";
        this.root.appendChild(heading);
        const list = document.createElement("div");
        list.className = "game-list";
        for (const game of games) {
            const card = document.createElement("button");
            card.className = "game-card";
            card.dataset.storyId = game.story_id;
            const title = document.createElement("strong");
            title.textContent = game.title;
            const synopsis = document.createElement("p");
            synopsis.textContent = game.synopsis;
            card.append(title, synopsis);
            card.addEventListener("click", () => this.onPick(game.story_id));
            list.appendChild(card);
        }
        this.root.appendChild(list);
    }
}

export class PlayerView {
    constructor(private root: HTMLElement,
                private controller: PlayController,
                private api: Api,
                private storyId: string) {}

    async mount(): Promise<void> {
        await this.controller.begin();
        this.render();
    }

    render(): void {
        const screen = this.controller.current();
        this.root.innerHTML = "";
        const stage = document.createElement("div");
        stage.className = "stage";
        stage.dataset.screen = screen.kind;
        if (screen.kind !== "error") {
            stage.appendChild(this.background(screen.backgroundUrl));
        }
        switch (screen.kind) {
            case "dialogue":
                this.renderDialogue(stage, screen);
                break;
            case "choices":
                this.renderChoices(stage, screen);
                break;
            case "chapter-end":
                this.renderChapterEnd(stage, screen);
                break;
            case "game-end":
                this.renderGameEnd(stage, screen);
                break;
            case "error":
                this.renderError(stage, screen);
                break;
        }
        this.root.appendChild(stage);
    }

    private background(url: string): HTMLImageElement {
        const img = document.createElement("img");
        img.className = "background";
        img.src = url;
        img.alt = "";
        this.fallbackOnError(img, "scenes");
        return img;
    }

    private fallbackOnError(img: HTMLImageElement,
                            kind: "characters" | "scenes"): void {
        img.addEventListener("error", () => {
            const fallback = this.api.assetUrl(this.storyId, kind,
                                               FALLBACK_ASSET_ID);
            if (img.src !== fallback) {
                img.src = fallback;
            }
        }, { once: true });
    }

    private renderDialogue(stage: HTMLElement,
                           screen: Extract<Screen, { kind: "dialogue" }>,
                           ): void {
        if (screen.spriteUrl) {
            const sprite = document.createElement("img");
            sprite.className = "sprite";
            sprite.src = screen.spriteUrl;
            sprite.alt = screen.speakerLabel;
            this.fallbackOnError(sprite, "characters");
            stage.appendChild(sprite);
        }
        const box = document.createElement("div");
        box.className = "dialogue-box";
        const name = document.createElement("div");
        name.className = "speaker";
        name.textContent = screen.speakerLabel;
        const text = document.createElement("p");
        text.className = "line";
        text.textContent = screen.text;
        box.append(name, text);
        box.addEventListener("click", () => this.advance());
        stage.appendChild(box);
    }

    private renderChoices(stage: HTMLElement,
                          screen: Extract<Screen, { kind: "choices" }>,
                          ): void {
        const panel = document.createElement("div");
        panel.className = "choice-panel";
        for (const option of screen.options) {
            const button = document.createElement("button");
            button.className = "choice";
            button.dataset.index = String(option.index);
            button.textContent = option.text;
            button.addEventListener("click", async () => {
                await this.controller.choose(option.index);
                this.render();
            });
            panel.appendChild(button);
        }
        stage.appendChild(panel);
    }

    private renderChapterEnd(stage: HTMLElement,
                             screen: Extract<Screen, { kind: "chapter-end" }>,
                             ): void {
        const card = document.createElement("div");
        card.className = "chapter-card";
        const heading = document.createElement("h2");
        heading.textContent = `End of chapter ${screen.finishedChapter}`;
        const note = document.createElement("p");
        note.textContent =
            `Chapter ${screen.finishedChapter} of ${screen.totalChapters} `
            + "complete. Tap to continue.";
        card.append(heading, note);
        card.addEventListener("click", () => this.advance());
        stage.appendChild(card);
    }

    private renderGameEnd(stage: HTMLElement,
                          screen: Extract<Screen, { kind: "game-end" }>,
                          ): void {
        const panel = document.createElement("div");
        panel.className = "ending-panel";
        const heading = document.createElement("h2");
        heading.textContent = screen.endingLabel;
        const description = document.createElement("p");
        description.textContent = screen.endingDescription;
        const history = document.createElement("p");
        history.className = "choice-history";
        history.textContent = screen.choiceHistory.length
            ? `Your choices: ${screen.choiceHistory.join(" , ")}`
            : "You made no choices.";
        const restart = document.createElement("button");
        restart.className = "restart";
        restart.textContent = "Play again";
        restart.addEventListener("click", async () => {
            await this.controller.restart();
            this.render();
        });
        panel.append(heading, description, history, restart);
        stage.appendChild(panel);
    }

    private renderError(stage: HTMLElement,
                        screen: Extract<Screen, { kind: "error" }>): void {
        const panel = document.createElement("div");
        panel.className = "error-panel";
        const message = document.createElement("p");
        message.textContent = `Something went wrong: ${screen.message}`;
        const retry = document.createElement("button");
        retry.className = "retry";
        retry.textContent = "Retry";
        retry.addEventListener("click", async () => {
            await this.controller.retry();
            this.render();
        });
        panel.append(message, retry);
        stage.appendChild(panel);
    }

    private async advance(): Promise<void> {
        await this.controller.advance();
        this.render();
    }
}
